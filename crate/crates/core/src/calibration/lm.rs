//! Levenberg-Marquardt least squares over transformed parameters.

use rayon::prelude::*;

use crate::{Error, Result};

/// Map from a parameter's natural domain to the whole real line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Transform {
    /// `(0, inf)`, fitted as `ln x`.
    Log,
    /// `(0, upper)`, fitted as `logit(x / upper)`.
    Logit { upper: f64 },
}

/// Transformed values are clamped to this magnitude.
const T_LIMIT: f64 = 40.0;

/// Beyond this magnitude a parameter counts as sitting on its domain edge.
const T_EDGE: f64 = 20.0;

impl Transform {
    pub(crate) fn forward(self, x: f64) -> f64 {
        let t = match self {
            Transform::Log => x.ln(),
            Transform::Logit { upper } => {
                let u = x / upper;
                (u / (1.0 - u)).ln()
            }
        };
        t.clamp(-T_LIMIT, T_LIMIT)
    }

    pub(crate) fn inverse(self, t: f64) -> f64 {
        let t = t.clamp(-T_LIMIT, T_LIMIT);
        match self {
            Transform::Log => t.exp(),
            Transform::Logit { upper } => upper / (1.0 + (-t).exp()),
        }
    }

    fn upper(self) -> f64 {
        match self {
            Transform::Log => f64::INFINITY,
            Transform::Logit { upper } => upper,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ParamSpec {
    pub name: &'static str,
    pub transform: Transform,
    /// Typical magnitude, sets finite-difference steps near zero.
    pub scale: f64,
}

impl ParamSpec {
    pub(crate) fn at_limit(&self, x: f64) -> bool {
        self.transform.forward(x).abs() >= T_EDGE
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LmOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub initial_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 200,
            tolerance: 1e-8,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LmOutcome {
    /// Natural-domain parameter values.
    pub params: Vec<f64>,
    pub residuals: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Objective after the start and after every accepted step.
    pub history: Vec<f64>,
}

fn objective(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn natural(specs: &[ParamSpec], t: &[f64]) -> Vec<f64> {
    specs.iter().zip(t).map(|(s, &t)| s.transform.inverse(t)).collect()
}

/// Minimizes `sum r_i(x)^2`. The damping starts at `initial_damping`, is
/// divided by 10 after an accepted step and multiplied by 10 after a
/// rejected one. Stops when an accepted step changes the objective by less
/// than `tolerance` relative, or when no damping gives a decrease.
pub(crate) fn minimize<F>(specs: &[ParamSpec], initial: &[f64], opts: LmOptions, f: F) -> Result<LmOutcome>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let mut t: Vec<f64> = specs
        .iter()
        .zip(initial)
        .map(|(s, &x)| s.transform.forward(x))
        .collect();
    let mut r = f(&natural(specs, &t))?;
    let mut s = objective(&r);
    if !s.is_finite() {
        return Err(Error::Degenerate("objective is not finite at the initial guess".into()));
    }
    let mut lambda = opts.initial_damping;
    let mut history = vec![s];
    for iteration in 1..=opts.max_iterations {
        let jac = transformed_jacobian(specs, &t, &f)?;
        let n = t.len();
        let mut a = vec![vec![0.0; n]; n];
        let mut g = vec![0.0; n];
        for (row_i, ji) in jac.iter().enumerate() {
            for (j, jj) in jac.iter().enumerate() {
                a[row_i][j] = dot(ji, jj);
            }
            g[row_i] = dot(ji, &r);
        }
        // A parameter on its domain edge with no leverage left is held there;
        // anywhere else a flat direction is an error.
        let mut free = vec![true; n];
        for (i, spec) in specs.iter().enumerate() {
            if !(a[i][i] > 0.0) {
                if t[i].abs() >= T_EDGE {
                    free[i] = false;
                } else {
                    return Err(Error::SingularJacobian {
                        parameter: spec.name.to_string(),
                    });
                }
            }
        }
        loop {
            let step = damped_step(&a, &g, &free, lambda).map_err(|i| Error::SingularJacobian {
                parameter: specs[i].name.to_string(),
            })?;
            let trial: Vec<f64> = t
                .iter()
                .zip(&step)
                .map(|(x, d)| (x + d).clamp(-T_LIMIT, T_LIMIT))
                .collect();
            let accepted = match f(&natural(specs, &trial)) {
                Ok(rt) => {
                    let st = objective(&rt);
                    if st.is_finite() && st < s {
                        Some((rt, st))
                    } else {
                        None
                    }
                }
                Err(_) => None,
            };
            match accepted {
                Some((rt, st)) => {
                    let rel = (s - st) / s;
                    t = trial;
                    r = rt;
                    s = st;
                    history.push(s);
                    lambda = (lambda / 10.0).max(1e-12);
                    if rel < opts.tolerance {
                        return Ok(done(specs, t, r, s, iteration, history));
                    }
                    break;
                }
                None => {
                    lambda *= 10.0;
                    if lambda > 1e16 {
                        // No damping decreases the objective: a stationary point.
                        return Ok(done(specs, t, r, s, iteration, history));
                    }
                }
            }
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iterations,
    })
}

fn done(specs: &[ParamSpec], t: Vec<f64>, r: Vec<f64>, s: f64, iterations: usize, history: Vec<f64>) -> LmOutcome {
    LmOutcome {
        params: natural(specs, &t),
        residuals: r,
        objective: s,
        iterations,
        history,
    }
}

/// Solves `(A + lambda diag A) d = -g` over the free parameters, in the
/// unit-diagonal scaling of `A`.
fn damped_step(a: &[Vec<f64>], g: &[f64], free: &[bool], lambda: f64) -> std::result::Result<Vec<f64>, usize> {
    let idx: Vec<usize> = (0..g.len()).filter(|&i| free[i]).collect();
    let d: Vec<f64> = idx.iter().map(|&i| a[i][i].sqrt()).collect();
    let m: Vec<Vec<f64>> = idx
        .iter()
        .enumerate()
        .map(|(p, &i)| {
            idx.iter()
                .enumerate()
                .map(|(q, &j)| a[i][j] / (d[p] * d[q]) + if p == q { lambda } else { 0.0 })
                .collect()
        })
        .collect();
    let rhs = idx.iter().enumerate().map(|(p, &i)| -g[i] / d[p]).collect();
    let y = solve(m, rhs).map_err(|p| idx[p])?;
    let mut step = vec![0.0; g.len()];
    for (p, &i) in idx.iter().enumerate() {
        step[i] = y[p] / d[p];
    }
    Ok(step)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Columns `dr/dt_j` by central differences in transformed space.
fn transformed_jacobian<F>(specs: &[ParamSpec], t: &[f64], f: &F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    (0..t.len())
        .into_par_iter()
        .map(|j| {
            let h = 1e-5 * t[j].abs().max(1.0);
            let mut up = t.to_vec();
            let mut down = t.to_vec();
            up[j] += h;
            down[j] -= h;
            let ru = f(&natural(specs, &up))?;
            let rd = f(&natural(specs, &down))?;
            Ok(ru.iter().zip(&rd).map(|(a, b)| (a - b) / (2.0 * h)).collect())
        })
        .collect()
}

/// Columns `dr/dx_j` in natural units; one-sided next to a domain edge.
pub(crate) fn natural_jacobian<F>(specs: &[ParamSpec], x: &[f64], f: &F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    (0..x.len())
        .into_par_iter()
        .map(|j| {
            let h = 1e-4 * x[j].abs().max(specs[j].scale);
            let upper = specs[j].transform.upper();
            let lo = if x[j] - h > 0.0 { x[j] - h } else { x[j] };
            let hi = if x[j] + h < upper { x[j] + h } else { x[j] };
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[j] = hi;
            b[j] = lo;
            let ra = f(&a)?;
            let rb = f(&b)?;
            Ok(ra.iter().zip(&rb).map(|(p, q)| (p - q) / (hi - lo)).collect())
        })
        .collect()
}

/// Sandwich covariance `A^-1 B A^-1` with `A = J^T J` and
/// `B = J^T diag(omega) J`; returns standard errors.
pub(crate) fn sandwich_errors(specs: &[ParamSpec], jac: &[Vec<f64>], omega: &[f64]) -> Result<Vec<f64>> {
    let n = jac.len();
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = dot(&jac[i], &jac[j]);
            b[i][j] = jac[i]
                .iter()
                .zip(&jac[j])
                .zip(omega)
                .map(|((p, q), w)| p * q * w)
                .sum();
        }
    }
    let inv = invert(a).map_err(|i| Error::SingularJacobian {
        parameter: specs[i].name.to_string(),
    })?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut v = 0.0;
        for k in 0..n {
            for l in 0..n {
                v += inv[i][k] * b[k][l] * inv[l][i];
            }
        }
        out.push(v.max(0.0).sqrt());
    }
    Ok(out)
}

/// Gaussian elimination with partial pivoting; `Err(column)` when singular.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> std::result::Result<Vec<f64>, usize> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        if !(a[piv][col].abs() > 1e-300 && a[piv][col].abs() > scale * 1e-17) {
            return Err(col);
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let m = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= m * a[col][k];
            }
            b[row] -= m * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Ok(x)
}

fn invert(a: Vec<Vec<f64>>) -> std::result::Result<Vec<Vec<f64>>, usize> {
    let n = a.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        cols.push(solve(a.clone(), e)?);
    }
    Ok((0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect())
}
