//! Epsilon-insensitive support vector regression with an RBF kernel.
//!
//! Training maximizes the dual in the difference parametrization
//! `a_i = beta_i - beta*_i`:
//!
//! ```text
//! D(a) = -1/2 a'Ka + y'a - eps * sum |a_i|,   -C <= a_i <= C,   sum a_i = 0
//! ```
//!
//! by pairwise coordinate ascent. Each step moves `a_i += t, a_j -= t` for
//! the maximal KKT-violating pair and maximizes the one-dimensional concave,
//! piecewise quadratic restriction of `D` exactly. Prediction is
//! `f(x) = sum a_i K(x_i, x) + b`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

#[derive(Debug, Error)]
pub enum SvrError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperParams(String),
    #[error("SMO did not converge after {} pair updates (KKT violation {:.3e})", .0.iterations, .0.final_violation)]
    DidNotConverge(Box<SvrModel>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Rbf,
}

/// Kernel family and width; only RBF `exp(-gamma |a - b|^2)` is supported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub gamma: f64,
}

impl KernelSpec {
    pub fn rbf(gamma: f64) -> Result<Self, SvrError> {
        let k = Self {
            kind: KernelKind::Rbf,
            gamma,
        };
        k.validate()?;
        Ok(k)
    }

    fn validate(&self) -> Result<(), SvrError> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(SvrError::InvalidHyperParams(format!(
                "gamma must be finite and positive, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    #[inline]
    fn eval_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        (-self.gamma * d2).exp()
    }
}

pub fn kernel_eval(spec: &KernelSpec, a: &[f64], b: &[f64]) -> Result<f64, SvrError> {
    if a.len() != b.len() {
        return Err(SvrError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(spec.eval_unchecked(a, b))
}

pub const DEFAULT_TOLERANCE: f64 = 1e-6;
/// Pair-update budget per training sample when `max_passes` is unset.
pub const DEFAULT_UPDATES_PER_SAMPLE: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvrHyperParams {
    /// Box bound on each dual coefficient.
    pub c: f64,
    /// Half-width of the insensitive tube.
    pub epsilon: f64,
    pub kernel: KernelSpec,
    /// Stopping threshold on the maximal KKT violation.
    pub tolerance: f64,
    /// Cap on pair updates; `None` means 10000 per training sample.
    pub max_passes: Option<u64>,
}

impl SvrHyperParams {
    pub fn new(c: f64, epsilon: f64, gamma: f64) -> Result<Self, SvrError> {
        let h = Self {
            c,
            epsilon,
            kernel: KernelSpec::rbf(gamma)?,
            tolerance: DEFAULT_TOLERANCE,
            max_passes: None,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<(), SvrError> {
        self.kernel.validate()?;
        let bad = |what: &str, v: f64| {
            Err(SvrError::InvalidHyperParams(format!("{what} = {v}")))
        };
        if !(self.c.is_finite() && self.c > 0.0) {
            return bad("c", self.c);
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return bad("epsilon", self.epsilon);
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return bad("tolerance", self.tolerance);
        }
        if self.max_passes == Some(0) {
            return bad("max_passes", 0.0);
        }
        Ok(())
    }
}

/// Trained SVR: retained support rows, their dual coefficients and the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub support_x: Matrix,
    /// `beta - beta*` for each support row.
    pub dual_coeffs: Vec<f64>,
    /// Training-row positions of the support rows.
    pub support_indices: Vec<usize>,
    pub bias: f64,
    pub hyper: SvrHyperParams,
    pub converged: bool,
    pub iterations: u64,
    pub final_violation: f64,
}

impl SvrModel {
    pub fn n_features(&self) -> usize {
        self.support_x.n_cols()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, SvrError> {
        if x.len() != self.n_features() {
            return Err(SvrError::DimensionMismatch {
                expected: self.n_features(),
                got: x.len(),
            });
        }
        Ok(self.predict_unchecked(x))
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let k = &self.hyper.kernel;
        let s: f64 = self
            .support_x
            .rows()
            .zip(&self.dual_coeffs)
            .map(|(sv, &a)| a * k.eval_unchecked(sv, x))
            .sum();
        s + self.bias
    }

    pub fn predict_batch(&self, x: &Matrix) -> Result<Vec<f64>, SvrError> {
        x.rows().map(|r| self.predict(r)).collect()
    }

    /// Dual coefficients expanded to all `n_train` training rows (zero for
    /// rows that are not support vectors).
    pub fn dense_coeffs(&self, n_train: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_train];
        for (&i, &a) in self.support_indices.iter().zip(&self.dual_coeffs) {
            out[i] = a;
        }
        out
    }
}

/// Dual objective `-1/2 a'Ka + y'a - eps sum|a|` evaluated from scratch.
pub fn dual_objective(
    coeffs: &[f64],
    x: &Matrix,
    y: &[f64],
    epsilon: f64,
    kernel: &KernelSpec,
) -> f64 {
    let n = coeffs.len();
    let mut quad = 0.0;
    for i in 0..n {
        if coeffs[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            if coeffs[j] != 0.0 {
                quad += coeffs[i] * coeffs[j] * kernel.eval_unchecked(x.row(i), x.row(j));
            }
        }
    }
    let lin: f64 = coeffs.iter().zip(y).map(|(a, y)| a * y).sum();
    let l1: f64 = coeffs.iter().map(|a| a.abs()).sum();
    -0.5 * quad + lin - epsilon * l1
}

struct Smo<'a> {
    gram: Vec<f64>,
    n: usize,
    a: Vec<f64>,
    /// y - K a
    grad: Vec<f64>,
    c: f64,
    eps: f64,
    trace: Option<&'a mut Vec<f64>>,
    objective: f64,
}

#[inline]
fn sign_up(a: f64) -> f64 {
    if a >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

#[inline]
fn sign_down(a: f64) -> f64 {
    if a > 0.0 {
        1.0
    } else {
        -1.0
    }
}

impl Smo<'_> {
    #[inline]
    fn k(&self, i: usize, j: usize) -> f64 {
        self.gram[i * self.n + j]
    }

    /// (i, j, violation): `i` maximizes the gain rate of increasing `a_i`,
    /// `j` the gain rate of decreasing `a_j`. Ties go to the lowest index.
    fn select_pair(&self) -> (Option<usize>, Option<usize>, f64) {
        let mut up: Option<(usize, f64)> = None;
        let mut low: Option<(usize, f64)> = None;
        for i in 0..self.n {
            let ai = self.a[i];
            if ai < self.c {
                let u = self.grad[i] - self.eps * sign_up(ai);
                if up.is_none_or(|(_, best)| u > best) {
                    up = Some((i, u));
                }
            }
            if ai > -self.c {
                let w = self.grad[i] - self.eps * sign_down(ai);
                if low.is_none_or(|(_, best)| w < best) {
                    low = Some((i, w));
                }
            }
        }
        match (up, low) {
            (Some((i, u)), Some((j, w))) => (Some(i), Some(j), u - w),
            (up, low) => (up.map(|p| p.0), low.map(|p| p.0), f64::NEG_INFINITY),
        }
    }

    /// Change in D when a_i += di and a_j += dj.
    fn delta_objective(&self, i: usize, j: usize, di: f64, dj: f64) -> f64 {
        let smooth = di * self.grad[i] + dj * self.grad[j]
            - 0.5 * (di * di * self.k(i, i) + dj * dj * self.k(j, j) + 2.0 * di * dj * self.k(i, j));
        let ai = self.a[i];
        let aj = self.a[j];
        let l1 = (ai + di).abs() - ai.abs() + (aj + dj).abs() - aj.abs();
        smooth - self.eps * l1
    }

    /// Exact maximizer of t -> D(a + t(e_i - e_j)) over the feasible segment.
    fn best_step(&self, i: usize, j: usize) -> f64 {
        let (ai, aj, c) = (self.a[i], self.a[j], self.c);
        let lo = (-c - ai).max(aj - c);
        let hi = (c - ai).min(aj + c);
        if lo >= hi {
            return 0.0;
        }
        let eta = self.k(i, i) + self.k(j, j) - 2.0 * self.k(i, j);
        let mut knots = vec![lo, hi];
        for t in [0.0, -ai, aj] {
            if t > lo && t < hi {
                knots.push(t);
            }
        }
        knots.sort_by(f64::total_cmp);
        knots.dedup();

        let mut candidates = knots.clone();
        if eta > 1e-12 {
            for w in knots.windows(2) {
                let mid = 0.5 * (w[0] + w[1]);
                let slope = self.grad[i] - self.grad[j]
                    - self.eps * (sign_up(ai + mid) - sign_up(aj - mid));
                candidates.push((slope / eta).clamp(w[0], w[1]));
            }
        }
        let phi = |t: f64| self.delta_objective(i, j, t, -t);
        let mut best_t = 0.0_f64;
        let mut best = 0.0;
        for t in candidates {
            let v = phi(t);
            if v > best || (v == best && t.abs() < best_t.abs()) {
                best = v;
                best_t = t;
            }
        }
        best_t
    }

    fn snap(&self, v: f64) -> f64 {
        let slack = 1e-12 * self.c.max(1.0);
        if (v - self.c).abs() <= slack {
            self.c
        } else if (v + self.c).abs() <= slack {
            -self.c
        } else {
            v.clamp(-self.c, self.c)
        }
    }

    /// Applies the step; returns false if it does not increase D.
    fn apply(&mut self, i: usize, j: usize, t: f64) -> bool {
        if t == 0.0 {
            return false;
        }
        let new_i = self.snap(self.a[i] + t);
        let new_j = self.snap(self.a[j] - t);
        let di = new_i - self.a[i];
        let dj = new_j - self.a[j];
        let gain = self.delta_objective(i, j, di, dj);
        if gain <= 0.0 {
            return false;
        }
        for k in 0..self.n {
            self.grad[k] -= self.gram[k * self.n + i] * di + self.gram[k * self.n + j] * dj;
        }
        self.a[i] = new_i;
        self.a[j] = new_j;
        self.objective += gain;
        if let Some(tr) = self.trace.as_deref_mut() {
            tr.push(self.objective);
        }
        true
    }

    fn bias(&self, violation_bounds: (f64, f64)) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..self.n {
            let a = self.a[i];
            if a > 0.0 && a < self.c {
                sum += self.grad[i] - self.eps;
                count += 1;
            } else if a < 0.0 && a > -self.c {
                sum += self.grad[i] + self.eps;
                count += 1;
            }
        }
        if count > 0 {
            return sum / count as f64;
        }
        let (m_up, m_low) = violation_bounds;
        match (m_up.is_finite(), m_low.is_finite()) {
            (true, true) => 0.5 * (m_up + m_low),
            (true, false) => m_up,
            (false, true) => m_low,
            (false, false) => 0.0,
        }
    }

    /// (max up-rate, min down-rate) over feasible directions.
    fn rate_bounds(&self) -> (f64, f64) {
        let mut m_up = f64::NEG_INFINITY;
        let mut m_low = f64::INFINITY;
        for i in 0..self.n {
            let ai = self.a[i];
            if ai < self.c {
                m_up = m_up.max(self.grad[i] - self.eps * sign_up(ai));
            }
            if ai > -self.c {
                m_low = m_low.min(self.grad[i] - self.eps * sign_down(ai));
            }
        }
        (m_up, m_low)
    }
}

/// Trains an SVR on (already scaled) inputs.
pub fn fit(x: &Matrix, y: &[f64], hyper: &SvrHyperParams) -> Result<SvrModel, SvrError> {
    fit_inner(x, y, hyper, None)
}

/// Like [`fit`], also recording the dual objective after every accepted
/// pair update.
pub fn fit_traced(
    x: &Matrix,
    y: &[f64],
    hyper: &SvrHyperParams,
) -> Result<(SvrModel, Vec<f64>), SvrError> {
    let mut trace = Vec::new();
    let model = fit_inner(x, y, hyper, Some(&mut trace))?;
    Ok((model, trace))
}

fn fit_inner(
    x: &Matrix,
    y: &[f64],
    hyper: &SvrHyperParams,
    trace: Option<&mut Vec<f64>>,
) -> Result<SvrModel, SvrError> {
    hyper.validate()?;
    let n = x.n_rows();
    if n < 2 {
        return Err(SvrError::DegenerateInput(format!("need at least 2 samples, got {n}")));
    }
    if y.len() != n {
        return Err(SvrError::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if let Some(v) = y.iter().chain(x.as_slice()).find(|v| !v.is_finite()) {
        return Err(SvrError::DegenerateInput(format!("non-finite value {v}")));
    }

    let kernel = hyper.kernel;
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        gram[i * n + i] = 1.0;
        for j in 0..i {
            let v = kernel.eval_unchecked(x.row(i), x.row(j));
            gram[i * n + j] = v;
            gram[j * n + i] = v;
        }
    }

    let mut smo = Smo {
        gram,
        n,
        a: vec![0.0; n],
        grad: y.to_vec(),
        c: hyper.c,
        eps: hyper.epsilon,
        trace,
        objective: 0.0,
    };
    if let Some(tr) = smo.trace.as_deref_mut() {
        tr.push(0.0);
    }

    let budget = hyper
        .max_passes
        .unwrap_or(DEFAULT_UPDATES_PER_SAMPLE * n as u64);
    let mut iterations = 0u64;
    let mut converged = false;
    let mut violation;
    loop {
        let (i, j, v) = smo.select_pair();
        violation = v;
        if violation <= hyper.tolerance {
            converged = true;
            break;
        }
        if iterations >= budget {
            break;
        }
        let (Some(i), Some(j)) = (i, j) else {
            converged = true;
            break;
        };
        let t = smo.best_step(i, j);
        if !smo.apply(i, j, t) {
            // no representable ascent along the most violating pair
            log::debug!("SMO stalled at violation {violation:.3e} after {iterations} updates");
            break;
        }
        iterations += 1;
    }

    let bias = smo.bias(smo.rate_bounds());
    let mut support_indices = Vec::new();
    let mut dual_coeffs = Vec::new();
    for (i, &a) in smo.a.iter().enumerate() {
        if a.abs() > hyper.tolerance {
            support_indices.push(i);
            dual_coeffs.push(a);
        }
    }
    let model = SvrModel {
        support_x: x.select_rows(&support_indices),
        dual_coeffs,
        support_indices,
        bias,
        hyper: *hyper,
        converged,
        iterations,
        final_violation: violation.max(0.0),
    };
    if converged {
        Ok(model)
    } else {
        Err(SvrError::DidNotConverge(Box::new(model)))
    }
}
