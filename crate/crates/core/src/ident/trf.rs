//! Bound-constrained nonlinear least squares by a trust-region reflective
//! method (Coleman–Li scaling, exact trust-region subproblem through an SVD
//! of the augmented Jacobian, reflection off the first bound hit, and a
//! fallback along the scaled anti-gradient).
//!
//! Minimizes `0.5 * ||f(x)||²` subject to `lower <= x <= upper`.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrfOptions {
    /// Outer iterations (accepted or rejected Jacobian updates).
    pub max_iter: usize,
    /// Residual evaluations, Jacobian columns excluded.
    pub max_nfev: usize,
    /// Relative reduction of the cost.
    pub ftol: f64,
    /// Relative step length.
    pub xtol: f64,
    /// Infinity norm of the scaled gradient.
    pub gtol: f64,
}

impl Default for TrfOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            max_nfev: 1000,
            ftol: 1e-10,
            xtol: 1e-10,
            gtol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    MaxIterations,
    Gradient,
    Cost,
    Step,
    CostAndStep,
}

impl Termination {
    pub fn converged(self) -> bool {
        self != Termination::MaxIterations
    }
}

#[derive(Debug, Clone)]
pub struct TrfResult {
    pub x: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `0.5 * ||f||²`
    pub cost: f64,
    pub iterations: usize,
    pub nfev: usize,
    pub termination: Termination,
    /// Infinity norm of the Coleman–Li scaled gradient at `x`.
    pub optimality: f64,
}

/// Forward differences with step `max(1e-7, 1e-7 |x_j|)`, taken backwards
/// when the forward point would leave the upper bound.
pub fn numerical_jacobian<F>(f: &F, x: &[f64], f0: &[f64], upper: &[f64]) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let m = f0.len();
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let mut h = (1e-7 * x[j].abs()).max(1e-7);
        if x[j] + h > upper[j] {
            h = -h;
        }
        xp[j] = x[j] + h;
        // use the representable step
        let dx = xp[j] - x[j];
        let fp = f(&xp)?;
        for i in 0..m {
            jac[(i, j)] = (fp[i] - f0[i]) / dx;
        }
        xp[j] = x[j];
    }
    Ok(jac)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn half_sq(f: &[f64]) -> f64 {
    0.5 * dot(f, f)
}

fn in_bounds(x: &[f64], lower: &[f64], upper: &[f64]) -> bool {
    x.iter().zip(lower.iter().zip(upper)).all(|(&x, (&l, &u))| x >= l && x <= u)
}

/// Clips onto the box and nudges bound values one ulp inside.
fn make_strictly_feasible(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for j in 0..x.len() {
        x[j] = x[j].clamp(lower[j], upper[j]);
        if x[j] == lower[j] {
            x[j] = x[j].next_up();
        } else if x[j] == upper[j] {
            x[j] = x[j].next_down();
        }
    }
}

/// Pushes a starting point off its bounds by a relative margin.
fn interior_start(x0: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    let rstep = 1e-10;
    x0.iter()
        .zip(lower.iter().zip(upper))
        .map(|(&x, (&l, &u))| {
            let lo = l + rstep * l.abs().max(1.0);
            let hi = u - rstep * u.abs().max(1.0);
            if lo > hi {
                0.5 * (l + u)
            } else {
                x.clamp(lo, hi)
            }
        })
        .collect()
}

/// Coleman–Li scaling vector `v` and its derivative sign `dv`.
fn cl_scaling(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let mut v = vec![1.0; n];
    let mut dv = vec![0.0; n];
    for j in 0..n {
        if g[j] < 0.0 && upper[j].is_finite() {
            v[j] = upper[j] - x[j];
            dv[j] = -1.0;
        } else if g[j] > 0.0 && lower[j].is_finite() {
            v[j] = x[j] - lower[j];
            dv[j] = 1.0;
        }
    }
    (v, dv)
}

/// Largest step along `s` from `x` that stays in the box, and which
/// components hit a bound at that step (signed by the step direction).
fn step_size_to_bound(x: &[f64], s: &[f64], lower: &[f64], upper: &[f64]) -> (f64, Vec<f64>) {
    let n = x.len();
    let mut steps = vec![f64::INFINITY; n];
    for j in 0..n {
        if s[j] != 0.0 {
            steps[j] = ((lower[j] - x[j]) / s[j]).max((upper[j] - x[j]) / s[j]);
        }
    }
    let min = steps.iter().copied().fold(f64::INFINITY, f64::min);
    let hits = (0..n)
        .map(|j| if steps[j] == min { s[j].signum() } else { 0.0 })
        .collect();
    (min, hits)
}

/// Parameter values `t` where `x + t s` crosses the sphere of radius `delta`.
fn intersect_trust_region(x: &[f64], s: &[f64], delta: f64) -> (f64, f64) {
    let a = dot(s, s);
    let b = dot(x, s);
    let c = dot(x, x) - delta * delta;
    let d = (b * b - a * c).max(0.0).sqrt();
    let q = -(b + d.copysign(b));
    let t1 = q / a;
    let t2 = c / q;
    if t1 < t2 {
        (t1, t2)
    } else {
        (t2, t1)
    }
}

/// Coefficients of `0.5 (s0 + t s)ᵀ (JᵀJ + diag) (s0 + t s) + gᵀ (s0 + t s)`
/// as `a t² + b t + c`.
fn quadratic_1d(j: &DMatrix<f64>, g: &[f64], s: &[f64], s0: Option<&[f64]>, diag: &[f64]) -> (f64, f64, f64) {
    let sv = DVector::from_column_slice(s);
    let js = j * &sv;
    let mut a = js.dot(&js);
    a += s.iter().zip(diag).map(|(x, d)| x * d * x).sum::<f64>();
    a *= 0.5;
    let mut b = dot(g, s);
    let mut c = 0.0;
    if let Some(s0) = s0 {
        let u = j * DVector::from_column_slice(s0);
        b += u.dot(&js);
        c = 0.5 * u.dot(&u) + dot(g, s0);
        b += s0.iter().zip(diag).zip(s).map(|((x, d), y)| x * d * y).sum::<f64>();
        c += 0.5 * s0.iter().zip(diag).map(|(x, d)| x * d * x).sum::<f64>();
    }
    (a, b, c)
}

fn minimize_quadratic_1d(a: f64, b: f64, lo: f64, hi: f64, c: f64) -> (f64, f64) {
    let mut candidates = vec![lo, hi];
    if a != 0.0 {
        let ext = -0.5 * b / a;
        if lo < ext && ext < hi {
            candidates.push(ext);
        }
    }
    candidates
        .into_iter()
        .map(|t| (t, t * (a * t + b) + c))
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .expect("non-empty")
}

fn evaluate_quadratic(j: &DMatrix<f64>, g: &[f64], s: &[f64], diag: &[f64]) -> f64 {
    let js = j * DVector::from_column_slice(s);
    let q = js.dot(&js) + s.iter().zip(diag).map(|(x, d)| x * d * x).sum::<f64>();
    0.5 * q + dot(s, g)
}

/// Exact trust-region subproblem given the SVD of the (augmented) Jacobian.
/// Returns the step and the Levenberg–Marquardt parameter found.
fn solve_trust_region(uf: &[f64], s: &[f64], v: &DMatrix<f64>, delta: f64, initial_alpha: f64, m_rows: usize) -> (Vec<f64>, f64) {
    let n = v.nrows();
    let k = s.len();
    let suf: Vec<f64> = (0..k).map(|i| s[i] * uf[i]).collect();
    let combine = |coef: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let mut p = vec![0.0; n];
        for i in 0..k {
            let c = coef(i);
            for r in 0..n {
                p[r] -= v[(r, i)] * c;
            }
        }
        p
    };
    let s_max = s.first().copied().unwrap_or(0.0);
    let s_min = s.last().copied().unwrap_or(0.0);
    let full_rank = k == n && m_rows >= n && s_min > f64::EPSILON * m_rows as f64 * s_max;
    if full_rank {
        let p = combine(&|i| uf[i] / s[i]);
        if norm(&p) <= delta {
            return (p, 0.0);
        }
    }
    let phi = |alpha: f64| -> (f64, f64) {
        let mut pn2 = 0.0;
        let mut d3 = 0.0;
        for i in 0..k {
            let den = s[i] * s[i] + alpha;
            pn2 += (suf[i] / den).powi(2);
            d3 += suf[i] * suf[i] / den.powi(3);
        }
        let pn = pn2.sqrt();
        (pn - delta, -d3 / pn)
    };
    let mut alpha_upper = norm(&suf) / delta;
    let mut alpha_lower = if full_rank {
        let (p0, d0) = phi(0.0);
        -p0 / d0
    } else {
        0.0
    };
    let mut alpha = if !full_rank && initial_alpha == 0.0 {
        (0.001 * alpha_upper).max((alpha_lower * alpha_upper).sqrt())
    } else {
        initial_alpha
    };
    for _ in 0..10 {
        if alpha < alpha_lower || alpha > alpha_upper {
            alpha = (0.001 * alpha_upper).max((alpha_lower * alpha_upper).sqrt());
        }
        let (ph, dph) = phi(alpha);
        if ph < 0.0 {
            alpha_upper = alpha;
        }
        let ratio = ph / dph;
        alpha_lower = alpha_lower.max(alpha - ratio);
        alpha -= (ph + delta) * ratio / delta;
        if ph.abs() < 0.01 * delta {
            break;
        }
    }
    let mut p = combine(&|i| suf[i] / (s[i] * s[i] + alpha));
    let pn = norm(&p);
    if pn > 0.0 {
        for x in &mut p {
            *x *= delta / pn;
        }
    }
    (p, alpha)
}

fn update_radius(delta: f64, actual: f64, predicted: f64, step_norm: f64, bound_hit: bool) -> (f64, f64) {
    let ratio = if predicted > 0.0 {
        actual / predicted
    } else if predicted == actual && actual == 0.0 {
        1.0
    } else {
        0.0
    };
    let delta = if ratio < 0.25 {
        0.25 * step_norm
    } else if ratio > 0.75 && bound_hit {
        2.0 * delta
    } else {
        delta
    };
    (delta, ratio)
}

fn check_termination(
    d_cost: f64,
    cost: f64,
    step_norm: f64,
    x_norm: f64,
    ratio: f64,
    opts: &TrfOptions,
) -> Option<Termination> {
    let f_ok = d_cost < opts.ftol * cost && ratio > 0.25;
    let x_ok = step_norm < opts.xtol * (opts.xtol + x_norm);
    match (f_ok, x_ok) {
        (true, true) => Some(Termination::CostAndStep),
        (true, false) => Some(Termination::Cost),
        (false, true) => Some(Termination::Step),
        _ => None,
    }
}

struct Step {
    x_step: Vec<f64>,
    h_step: Vec<f64>,
    predicted: f64,
}

#[allow(clippy::too_many_arguments)]
fn select_step(
    x: &[f64],
    j_h: &DMatrix<f64>,
    diag_h: &[f64],
    g_h: &[f64],
    mut p: Vec<f64>,
    mut p_h: Vec<f64>,
    d: &[f64],
    delta: f64,
    lower: &[f64],
    upper: &[f64],
    theta: f64,
) -> Step {
    let n = x.len();
    let trial: Vec<f64> = (0..n).map(|j| x[j] + p[j]).collect();
    if in_bounds(&trial, lower, upper) {
        let predicted = -evaluate_quadratic(j_h, g_h, &p_h, diag_h);
        return Step {
            x_step: p,
            h_step: p_h,
            predicted,
        };
    }
    let (p_stride, hits) = step_size_to_bound(x, &p, lower, upper);
    // reflected direction
    let mut r_h = p_h.clone();
    for j in 0..n {
        if hits[j] != 0.0 {
            r_h[j] = -r_h[j];
        }
    }
    let r: Vec<f64> = (0..n).map(|j| d[j] * r_h[j]).collect();
    for j in 0..n {
        p[j] *= p_stride;
        p_h[j] *= p_stride;
    }
    let x_on_bound: Vec<f64> = (0..n).map(|j| x[j] + p[j]).collect();
    let (_, to_tr) = intersect_trust_region(&p_h, &r_h, delta);
    let (to_bound, _) = step_size_to_bound(&x_on_bound, &r, lower, upper);
    let r_stride = to_bound.min(to_tr);
    let (r_lo, r_hi) = if r_stride > 0.0 {
        let lo = (1.0 - theta) * p_stride / r_stride;
        let hi = if r_stride == to_bound { theta * to_bound } else { to_tr };
        (lo, hi)
    } else {
        (0.0, -1.0)
    };
    let (r_step, r_h_step, r_value) = if r_lo <= r_hi {
        let (a, b, c) = quadratic_1d(j_h, g_h, &r_h, Some(&p_h), diag_h);
        let (t, val) = minimize_quadratic_1d(a, b, r_lo, r_hi, c);
        let rh: Vec<f64> = (0..n).map(|j| p_h[j] + t * r_h[j]).collect();
        let rx: Vec<f64> = (0..n).map(|j| rh[j] * d[j]).collect();
        (rx, rh, val)
    } else {
        (vec![], vec![], f64::INFINITY)
    };
    // keep the truncated Newton step strictly interior
    for j in 0..n {
        p[j] *= theta;
        p_h[j] *= theta;
    }
    let p_value = evaluate_quadratic(j_h, g_h, &p_h, diag_h);
    let mut ag_h: Vec<f64> = g_h.iter().map(|g| -g).collect();
    let ag: Vec<f64> = (0..n).map(|j| d[j] * ag_h[j]).collect();
    let to_tr = delta / norm(&ag_h);
    let (to_bound, _) = step_size_to_bound(x, &ag, lower, upper);
    let ag_limit = if to_bound < to_tr { theta * to_bound } else { to_tr };
    let (a, b, _) = quadratic_1d(j_h, g_h, &ag_h, None, diag_h);
    let (ag_stride, ag_value) = minimize_quadratic_1d(a, b, 0.0, ag_limit, 0.0);
    for v in &mut ag_h {
        *v *= ag_stride;
    }
    let ag: Vec<f64> = ag.iter().map(|v| v * ag_stride).collect();
    if p_value < r_value && p_value < ag_value {
        Step {
            x_step: p,
            h_step: p_h,
            predicted: -p_value,
        }
    } else if r_value < p_value && r_value < ag_value {
        Step {
            x_step: r_step,
            h_step: r_h_step,
            predicted: -r_value,
        }
    } else {
        Step {
            x_step: ag,
            h_step: ag_h,
            predicted: -ag_value,
        }
    }
}

fn column_norms(j: &DMatrix<f64>) -> Vec<f64> {
    (0..j.ncols()).map(|c| j.column(c).norm()).collect()
}

fn gradient(j: &DMatrix<f64>, f: &[f64]) -> Vec<f64> {
    (j.transpose() * DVector::from_column_slice(f)).as_slice().to_vec()
}

/// Solves the bounded problem from `x0`; `residual` may fail, in which case
/// the error is returned unless it happens on a trial point, where it shrinks
/// the trust region instead.
pub fn least_squares<F>(residual: F, x0: &[f64], lower: &[f64], upper: &[f64], opts: &TrfOptions) -> Result<TrfResult>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = x0.len();
    if lower.len() != n || upper.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: lower.len().min(upper.len()),
        });
    }
    if lower.iter().zip(upper).any(|(l, u)| !(l < u)) {
        return Err(Error::domain("every lower bound must be strictly below its upper bound"));
    }
    let mut x = interior_start(x0, lower, upper);
    let mut f = residual(&x)?;
    let m = f.len();
    if m == 0 {
        return Err(Error::Data("least squares needs at least one residual".into()));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("residuals are not finite at the starting point".into()));
    }
    let mut nfev = 1;
    let mut cost = half_sq(&f);
    let mut jac = numerical_jacobian(&residual, &x, &f, upper)?;
    let mut g = gradient(&jac, &f);
    let mut scale_inv: Vec<f64> = column_norms(&jac).into_iter().map(|c| if c == 0.0 { 1.0 } else { c }).collect();
    let mut scale: Vec<f64> = scale_inv.iter().map(|c| 1.0 / c).collect();

    let (v0, dv0) = cl_scaling(&x, &g, lower, upper);
    let mut v0 = v0;
    for j in 0..n {
        if dv0[j] != 0.0 {
            v0[j] *= scale_inv[j];
        }
    }
    let mut delta = norm(&(0..n).map(|j| x[j] * scale_inv[j] / v0[j].sqrt()).collect::<Vec<_>>());
    if delta == 0.0 || !delta.is_finite() {
        delta = 1.0;
    }
    let mut alpha = 0.0;
    let mut termination = None;
    let mut iterations = 0;
    let mut optimality;

    loop {
        let (v, dv) = cl_scaling(&x, &g, lower, upper);
        optimality = (0..n).map(|j| (g[j] * v[j]).abs()).fold(0.0, f64::max);
        if optimality < opts.gtol {
            termination = Some(Termination::Gradient);
        }
        if termination.is_some() || nfev >= opts.max_nfev || iterations >= opts.max_iter {
            break;
        }
        // Coleman-Li distances expressed in the Jacobian-scaled variables
        let v: Vec<f64> = (0..n).map(|j| if dv[j] != 0.0 { v[j] * scale_inv[j] } else { v[j] }).collect();
        let d: Vec<f64> = (0..n).map(|j| v[j].sqrt() * scale[j]).collect();
        let diag_h: Vec<f64> = (0..n).map(|j| g[j] * dv[j] * scale[j]).collect();
        let g_h: Vec<f64> = (0..n).map(|j| d[j] * g[j]).collect();

        let mut j_h = jac.clone();
        for (c, &dc) in d.iter().enumerate() {
            j_h.column_mut(c).scale_mut(dc);
        }
        let mut aug = DMatrix::zeros(m + n, n);
        aug.rows_mut(0, m).copy_from(&j_h);
        for c in 0..n {
            aug[(m + c, c)] = diag_h[c].max(0.0).sqrt();
        }
        let mut f_aug = DVector::zeros(m + n);
        f_aug.rows_mut(0, m).copy_from_slice(&f);
        let svd = SVD::new(aug, true, true);
        let (u, vt) = match (svd.u, svd.v_t) {
            (Some(u), Some(vt)) => (u, vt),
            _ => return Err(Error::NotConverged("SVD of the Jacobian failed".into())),
        };
        let s: Vec<f64> = svd.singular_values.iter().copied().collect();
        let uf: Vec<f64> = (u.transpose() * &f_aug).iter().copied().collect();
        let vmat = vt.transpose();
        let theta = 0.995f64.max(1.0 - optimality);

        let mut actual = -1.0;
        let mut accepted: Option<(Vec<f64>, Vec<f64>, f64)> = None;
        while actual <= 0.0 && nfev < opts.max_nfev {
            let (p_h, a) = solve_trust_region(&uf, &s, &vmat, delta, alpha, m + n);
            alpha = a;
            let p: Vec<f64> = (0..n).map(|j| d[j] * p_h[j]).collect();
            let step = select_step(&x, &j_h, &diag_h, &g_h, p, p_h, &d, delta, lower, upper, theta);
            let mut x_new: Vec<f64> = (0..n).map(|j| x[j] + step.x_step[j]).collect();
            make_strictly_feasible(&mut x_new, lower, upper);
            let f_new = residual(&x_new);
            nfev += 1;
            let h_norm = norm(&step.h_step);
            let f_new = match f_new {
                Ok(f_new) if f_new.iter().all(|v| v.is_finite()) => f_new,
                _ => {
                    delta = 0.25 * h_norm;
                    if delta == 0.0 {
                        break;
                    }
                    continue;
                }
            };
            let cost_new = half_sq(&f_new);
            actual = cost - cost_new;
            let (delta_new, ratio) = update_radius(delta, actual, step.predicted, h_norm, h_norm > 0.95 * delta);
            let step_norm = norm(&step.x_step);
            termination = check_termination(actual, cost, step_norm, norm(&x), ratio, opts);
            if actual > 0.0 {
                accepted = Some((x_new, f_new, cost_new));
            }
            if termination.is_some() {
                break;
            }
            if delta_new > 0.0 {
                alpha *= delta / delta_new;
            }
            delta = delta_new;
        }
        if let (true, Some((x_new, f_new, cost_new))) = (actual > 0.0, accepted) {
            x = x_new;
            f = f_new;
            cost = cost_new;
            jac = numerical_jacobian(&residual, &x, &f, upper)?;
            g = gradient(&jac, &f);
            let norms = column_norms(&jac);
            for j in 0..n {
                scale_inv[j] = scale_inv[j].max(norms[j]);
                scale[j] = 1.0 / scale_inv[j];
            }
        }
        iterations += 1;
        if delta == 0.0 && termination.is_none() {
            // trust region collapsed on repeated non-finite trials
            break;
        }
    }
    Ok(TrfResult {
        x,
        residuals: f,
        cost,
        iterations,
        nfev,
        termination: termination.unwrap_or(Termination::MaxIterations),
        optimality,
    })
}
