//! Least-squares estimation of model parameters from a histogram.
//!
//! The objective is `Σ w_i (h_i − q_i(θ))²` with `h_i = counts_i / n_total`
//! and `q_i(θ) = p(t_i; θ) · bin_width` at bin centers `t_i`. Every free
//! parameter is positive and is optimized as `φ = ln θ`; bounds are applied
//! as box limits on `φ`.
//!
//! The minimizer is Levenberg-Marquardt with Marquardt column scaling, a
//! QR-based step solve and gain-ratio damping control. A run stops when the
//! largest scaled gradient `|J_jᵀ r| / (‖J_j‖ ‖r‖)` over unconstrained
//! parameters falls below [`GRADIENT_TOLERANCE`], when an accepted step
//! changes the objective by less than [`SSE_TOLERANCE`] relative, or after
//! [`MAX_ITERATIONS`]. Only the first condition counts as converged.

use alloc::vec;
use alloc::vec::Vec;
use libm::{exp, log, sqrt};
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::extract::ResponseHistogram;
use crate::linalg::{norm2, Qr};
use crate::models::{
    model_jacobian_into, rates_to_limits, ExpComponent, ModelFamily, ModelParams, MultiExpParams,
    PowerLawParams, SinhcParams,
};

pub const GRADIENT_TOLERANCE: f64 = 1e-10;
pub const SSE_TOLERANCE: f64 = 1e-12;
/// Relative change of the SSE treated as rounding. Only the final Newton
/// polish may take a step that raises the SSE, and by no more than this.
pub const SSE_ROUNDING: f64 = 64.0 * f64::EPSILON;
pub const MAX_ITERATIONS: usize = 500;
/// A start whose SSE exceeds the best by more than this fraction is a
/// low-R² failure.
pub const LOW_R2_SSE_SLACK: f64 = 0.01;
/// Multistart perturbation: each log-parameter moves uniformly within
/// `±ln(START_SPREAD)` of the heuristic start.
pub const START_SPREAD: f64 = 2.0;
/// Adjacent multi-exp lifetimes closer than this ratio have merged.
pub const MERGED_LIFETIME_RATIO: f64 = 1.001;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error("histogram has no events")]
    EmptyHistogram,
    #[error("need at least one exponential component")]
    NoComponents,
    #[error("expected {expected} parameters, got {got}")]
    WrongDimension { expected: usize, got: usize },
    #[error("initial parameter {index} ({value}) is outside its bounds")]
    InitOutOfBounds { index: usize, value: f64 },
    #[error("all {} starts failed", starts.len())]
    AllStartsFailed { starts: Vec<StartDiagnostic> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Plain least squares on the normalized histogram.
    #[default]
    Uniform,
    /// `w_i = 1 / max(E_i, 1)` with `E_i` the model's expected count, so the
    /// objective is Pearson's χ².
    Poisson,
}

/// Free coordinates of the sinhc model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinhcAxis {
    /// `[C, τ_min, τ_max, v]`
    #[default]
    Limits,
    /// `[C, γ₀, Δ, v]`
    Rates,
}

/// Per-parameter box in natural units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn contains(&self, theta: &[f64]) -> Option<usize> {
        theta
            .iter()
            .enumerate()
            .find(|(j, &x)| !(x >= self.lower[*j] && x <= self.upper[*j]))
            .map(|(j, _)| j)
    }

    fn clamp(&self, theta: &mut [f64]) {
        for (j, x) in theta.iter_mut().enumerate() {
            *x = x.clamp(self.lower[j], self.upper[j]);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitProblem {
    pub histogram: ResponseHistogram,
    pub family: ModelFamily,
    /// Number of exponentials (multi-exp only).
    pub n_components: usize,
    pub bounds: Bounds,
    pub weighting: Weighting,
    pub sinhc_axis: SinhcAxis,
    /// Fixed power-law offset `t_d`, µs. Defaults to the trim offset so the
    /// power law is singular at the avalanche.
    pub power_law_offset: f64,
}

impl FitProblem {
    pub fn new(
        histogram: ResponseHistogram,
        family: ModelFamily,
        n_components: usize,
    ) -> Result<Self, FitError> {
        if histogram.n_total == 0 || histogram.counts.is_empty() {
            return Err(FitError::EmptyHistogram);
        }
        if family == ModelFamily::MultiExp && n_components == 0 {
            return Err(FitError::NoComponents);
        }
        let n_components = if family == ModelFamily::MultiExp { n_components } else { 0 };
        let power_law_offset = histogram.t_offset;
        let mut p = Self {
            bounds: Bounds { lower: Vec::new(), upper: Vec::new() },
            histogram,
            family,
            n_components,
            weighting: Weighting::Uniform,
            sinhc_axis: SinhcAxis::Limits,
            power_law_offset,
        };
        p.bounds = p.default_bounds();
        Ok(p)
    }

    pub fn with_weighting(mut self, weighting: Weighting) -> Self {
        self.weighting = weighting;
        self
    }

    pub fn with_sinhc_axis(mut self, axis: SinhcAxis) -> Self {
        self.sinhc_axis = axis;
        self.bounds = self.default_bounds();
        self
    }

    pub fn n_free(&self) -> usize {
        match self.family {
            ModelFamily::MultiExp => 2 * self.n_components + 1,
            ModelFamily::Sinhc => 4,
            ModelFamily::PowerLaw => 3,
        }
    }

    /// Bins entering the fit: all surviving bins up to the last nonzero one.
    pub fn n_bins(&self) -> usize {
        self.histogram
            .counts
            .iter()
            .rposition(|&c| c > 0)
            .map_or(0, |i| i + 1)
    }

    fn default_bounds(&self) -> Bounds {
        let w = self.histogram.bin_width;
        let window = self.histogram.window();
        let (tau_lo, tau_hi) = (w / 100.0, 1e3 * window);
        let mass = (1e-12, 1e3);
        let dark = (1e-12, 1e6);
        let (lower, upper): (Vec<f64>, Vec<f64>) = match self.family {
            ModelFamily::MultiExp => {
                let mut pairs = Vec::new();
                for _ in 0..self.n_components {
                    pairs.push(mass);
                    pairs.push((tau_lo, tau_hi));
                }
                pairs.push(dark);
                pairs.into_iter().unzip()
            }
            ModelFamily::Sinhc => match self.sinhc_axis {
                SinhcAxis::Limits => [mass, (tau_lo, tau_hi), (tau_lo, tau_hi), dark]
                    .into_iter()
                    .unzip(),
                SinhcAxis::Rates => [mass, (1.0 / tau_hi, 1.0 / tau_lo), (1.0 / tau_hi, 1.0 / tau_lo), dark]
                    .into_iter()
                    .unzip(),
            },
            ModelFamily::PowerLaw => [(1e-12, 1e6), (1e-3, 50.0), dark].into_iter().unzip(),
        };
        Bounds { lower, upper }
    }

    /// Model parameters from a free vector in natural units.
    pub fn params_from_free(&self, theta: &[f64]) -> ModelParams {
        match self.family {
            ModelFamily::MultiExp => {
                let components = (0..self.n_components)
                    .map(|i| ExpComponent {
                        u: theta[2 * i],
                        tau: theta[2 * i + 1],
                    })
                    .collect();
                ModelParams::MultiExp(MultiExpParams {
                    components,
                    v: theta[2 * self.n_components],
                })
            }
            ModelFamily::Sinhc => match self.sinhc_axis {
                SinhcAxis::Limits => {
                    ModelParams::Sinhc(SinhcParams::from_limits(theta[0], theta[1], theta[2], theta[3]))
                }
                SinhcAxis::Rates => ModelParams::Sinhc(SinhcParams {
                    c: theta[0],
                    gamma0: theta[1],
                    delta: theta[2],
                    v: theta[3],
                }),
            },
            ModelFamily::PowerLaw => ModelParams::PowerLaw(PowerLawParams {
                d: theta[0],
                alpha: theta[1],
                t_d: self.power_law_offset,
                v: theta[2],
            }),
        }
    }

    /// Free vector of a parameter set of this problem's family.
    pub fn free_from_params(&self, params: &ModelParams) -> Vec<f64> {
        match params {
            ModelParams::Sinhc(s) if self.sinhc_axis == SinhcAxis::Limits => {
                let (lo, hi) = rates_to_limits(s.gamma0, s.delta);
                vec![s.c, lo, hi, s.v]
            }
            ModelParams::PowerLaw(p) => vec![p.d, p.alpha, p.v],
            other => other.to_vec(),
        }
    }

    /// Gradient of the density w.r.t. the free parameters (natural units).
    fn free_gradient(&self, t: f64, params: &ModelParams, theta: &[f64], full: &mut [f64], out: &mut [f64]) {
        model_jacobian_into(t, params, full);
        match (self.family, self.sinhc_axis) {
            (ModelFamily::Sinhc, SinhcAxis::Limits) => {
                // γ₀ = (1/a + 1/b)/2, Δ = (1/a − 1/b)/2
                let (a, b) = (theta[1], theta[2]);
                let da = -0.5 / (a * a);
                let db = -0.5 / (b * b);
                out[0] = full[0];
                out[1] = (full[1] + full[2]) * da;
                out[2] = (full[1] - full[2]) * db;
                out[3] = full[3];
            }
            (ModelFamily::PowerLaw, _) => {
                out[0] = full[0];
                out[1] = full[1];
                out[2] = full[3];
            }
            _ => out.copy_from_slice(full),
        }
    }
}

/// Evaluates residuals and Jacobian in log coordinates.
struct Objective<'a> {
    problem: &'a FitProblem,
    t: Vec<f64>,
    h: Vec<f64>,
    n: f64,
    width: f64,
}

/// Relative residual size treated as an exact fit by the gradient test.
const RESIDUAL_FLOOR: f64 = 1e-4;

/// Expected count below which Poisson weights stop growing.
const EXPECTED_COUNT_FLOOR: f64 = 1.0;

impl<'a> Objective<'a> {
    fn new(problem: &'a FitProblem) -> Self {
        let hist = &problem.histogram;
        let m = problem.n_bins();
        let n = hist.n_total as f64;
        let t = (0..m).map(|i| hist.bin_center(i)).collect();
        let h = hist.counts[..m].iter().map(|&c| c as f64 / n).collect();
        Self { problem, t, h, n, width: hist.bin_width }
    }

    fn m(&self) -> usize {
        self.t.len()
    }

    /// Residual norm below which a fit counts as exact: the gradient test
    /// divides by this instead, since a near-zero residual vector is pure
    /// rounding and has no meaningful direction.
    fn residual_floor(&self) -> f64 {
        RESIDUAL_FLOOR
            * match self.problem.weighting {
                Weighting::Uniform => norm2(&self.h),
                // ‖h/√q‖ ≈ √(Σh) = 1 near a fit
                Weighting::Poisson => 1.0,
            }
    }

    /// Residual weight `√w` at expectation `q` and `d r / d q`.
    fn weight(&self, h: f64, q: f64) -> (f64, f64) {
        match self.problem.weighting {
            Weighting::Uniform => (1.0, -1.0),
            Weighting::Poisson => {
                let e = self.n * q;
                if e > EXPECTED_COUNT_FLOOR {
                    let s = 1.0 / sqrt(q);
                    (s, -s * (1.0 + 0.5 * (h - q) / q))
                } else {
                    let s = sqrt(self.n / EXPECTED_COUNT_FLOOR);
                    (s, -s)
                }
            }
        }
    }

    fn residuals(&self, theta: &[f64]) -> Vec<f64> {
        let params = self.problem.params_from_free(theta);
        if let ModelParams::Sinhc(s) = &params {
            // Δ ≥ γ₀ (rates axis) is a growing density; reject the point
            if !(s.delta < s.gamma0) {
                return vec![f64::NAN; self.m()];
            }
        }
        self.t
            .iter()
            .zip(&self.h)
            .map(|(&t, &h)| {
                let q = params.pdf(t) * self.width;
                self.weight(h, q).0 * (h - q)
            })
            .collect()
    }

    /// Column-major `m × n` Jacobian of the residuals w.r.t. `φ = ln θ`.
    fn jacobian(&self, theta: &[f64]) -> Vec<f64> {
        let params = self.problem.params_from_free(theta);
        let m = self.m();
        let n = theta.len();
        let mut full = vec![0.0; params.to_vec().len()];
        let mut grad = vec![0.0; n];
        let mut jac = vec![0.0; m * n];
        for i in 0..m {
            self.problem.free_gradient(self.t[i], &params, theta, &mut full, &mut grad);
            let q = params.pdf(self.t[i]) * self.width;
            let scale = self.weight(self.h[i], q).1 * self.width;
            for j in 0..n {
                jac[j * m + i] = scale * grad[j] * theta[j];
            }
        }
        jac
    }
}

/// Compensated (Neumaier) sum of squares. Near a minimum the SSE decrease of
/// a Newton step is a few ulps; naive summation buries it in rounding.
fn sum_sq(r: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &x in r {
        let v = x * x;
        let t = sum + v;
        if libm::fabs(sum) >= libm::fabs(v) {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    SseStagnation,
    DampingLimit,
    IterationLimit,
    NonFiniteObjective,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// Stopped without meeting the gradient criterion.
    NotConverged,
    /// A component collapsed onto a bound or onto another component.
    Degenerate,
    /// Converged, but to an SSE well above the best start.
    LowRSquared,
}

/// Summary of one multistart run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartDiagnostic {
    pub index: usize,
    pub sse: f64,
    pub converged: bool,
    pub n_iterations: usize,
    pub termination: Termination,
    pub failure: Option<FailureKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub params: ModelParams,
    /// Free parameters in natural units.
    pub free: Vec<f64>,
    /// Linearized standard errors of `free`, if the Jacobian has full rank.
    pub std_errors: Option<Vec<f64>>,
    pub sse: f64,
    pub converged: bool,
    pub n_iterations: usize,
    pub termination: Termination,
    pub max_scaled_gradient: f64,
    pub start_index: usize,
    pub failures: usize,
    /// Objective after the initial point and every accepted step.
    pub sse_trace: Vec<f64>,
    pub starts: Vec<StartDiagnostic>,
}

/// Largest scaled gradient over parameters not held by an active bound, and
/// the mask of free (inactive) parameters.
fn scaled_gradient(jac: &[f64], r: &[f64], phi: &[f64], lo: &[f64], hi: &[f64], r_floor: f64) -> (f64, Vec<bool>) {
    let m = r.len();
    let n = phi.len();
    let rnorm = norm2(r).max(r_floor);
    let mut max = 0.0f64;
    let mut free = vec![true; n];
    for j in 0..n {
        let col = &jac[j * m..(j + 1) * m];
        let g: f64 = col.iter().zip(r).map(|(a, b)| a * b).sum();
        // descent moves φ_j along −g
        let at_lo = phi[j] <= lo[j] && g > 0.0;
        let at_hi = phi[j] >= hi[j] && g < 0.0;
        if at_lo || at_hi {
            free[j] = false;
            continue;
        }
        let cnorm = norm2(col);
        if cnorm > 0.0 && rnorm > 0.0 {
            max = max.max(libm::fabs(g) / (cnorm * rnorm));
        }
    }
    (max, free)
}

struct State {
    phi: Vec<f64>,
    theta: Vec<f64>,
    r: Vec<f64>,
    sse: f64,
    jac: Vec<f64>,
}

const POLISH_STEPS: usize = 20;

const DIAG_MEMORY: f64 = 1e-3;

fn free_gradient_vec(jac: &[f64], r: &[f64], n: usize) -> Vec<f64> {
    let m = r.len();
    (0..n).map(|j| jac[j * m..(j + 1) * m].iter().zip(r).map(|(a, b)| a * b).sum()).collect()
}

/// Newton iterations on ½‖r‖² with a Hessian from central differences of the
/// analytic gradient. Gauss-Newton only converges linearly when the residual
/// is large, which leaves the gradient test out of reach of the SSE test.
fn newton_polish(
    obj: &Objective,
    problem: &FitProblem,
    st: &mut State,
    lo: &[f64],
    hi: &[f64],
    iterations: &mut usize,
    trace: &mut Vec<f64>,
) -> f64 {
    let n = st.phi.len();
    let h = 1e-5;
    let mut grad_max = f64::INFINITY;
    for _ in 0..POLISH_STEPS {
        let (g, free) = scaled_gradient(&st.jac, &st.r, &st.phi, lo, hi, obj.residual_floor());
        grad_max = g;
        if grad_max < GRADIENT_TOLERANCE || *iterations >= MAX_ITERATIONS {
            break;
        }
        *iterations += 1;
        let cols: Vec<usize> = (0..n).filter(|&j| free[j]).collect();
        let k = cols.len();
        let grad = free_gradient_vec(&st.jac, &st.r, n);
        let mut hess = vec![0.0; k * k];
        for (c, &j) in cols.iter().enumerate() {
            let mut side = [Vec::new(), Vec::new()];
            for (s, sign) in [(0, 1.0), (1, -1.0)] {
                let mut theta = st.theta.clone();
                theta[j] = exp(st.phi[j] + sign * h);
                let r = obj.residuals(&theta);
                let jac = obj.jacobian(&theta);
                side[s] = free_gradient_vec(&jac, &r, n);
            }
            for (i, &ji) in cols.iter().enumerate() {
                hess[c * k + i] = (side[0][ji] - side[1][ji]) / (2.0 * h);
            }
        }
        // symmetrize
        for a in 0..k {
            for b in 0..a {
                let s = 0.5 * (hess[a * k + b] + hess[b * k + a]);
                hess[a * k + b] = s;
                hess[b * k + a] = s;
            }
        }
        let rhs: Vec<f64> = cols.iter().map(|&j| -grad[j]).collect();
        let mut mu = 0.0;
        let mut moved = false;
        while mu < 1e8 {
            let mut a = hess.clone();
            for c in 0..k {
                a[c * k + c] += mu * hess[c * k + c].abs().max(f64::MIN_POSITIVE);
            }
            if let Some(step) = Qr::new(a, k, k).solve(&rhs) {
                let mut phi_new = st.phi.clone();
                for (c, &j) in cols.iter().enumerate() {
                    phi_new[j] = (st.phi[j] + step[c]).clamp(lo[j], hi[j]);
                }
                let mut theta_new: Vec<f64> = phi_new.iter().map(|&x| exp(x)).collect();
                problem.bounds.clamp(&mut theta_new);
                let r_new = obj.residuals(&theta_new);
                let sse_new = sum_sq(&r_new);
                let jac_new = obj.jacobian(&theta_new);
                // Along a poorly determined direction the objective is flat to
                // rounding well before the gradient test can pass, so a step
                // that leaves the SSE unchanged within rounding is still taken
                // when it shrinks the gradient.
                let better = sse_new < st.sse
                    || (sse_new <= st.sse * (1.0 + SSE_ROUNDING)
                        && scaled_gradient(&jac_new, &r_new, &phi_new, lo, hi, obj.residual_floor()).0 < grad_max);
                if sse_new.is_finite() && better {
                    st.phi = phi_new;
                    st.jac = jac_new;
                    st.theta = theta_new;
                    st.r = r_new;
                    st.sse = sse_new;
                    trace.push(sse_new);
                    moved = true;
                    break;
                }
            }
            mu = if mu == 0.0 { 1e-8 } else { mu * 10.0 };
        }
        if !moved {
            break;
        }
    }
    grad_max
}

fn std_errors(jac: &[f64], m: usize, n: usize, theta: &[f64], sse: f64) -> Option<Vec<f64>> {
    if m <= n {
        return None;
    }
    let qr = Qr::new(jac.to_vec(), m, n);
    if qr.is_rank_deficient(1e-15) {
        return None;
    }
    let r = qr.r();
    // rows of R^{-1}: solve R x = e_k by back substitution
    let mut rinv = vec![0.0; n * n];
    for k in 0..n {
        for i in (0..=k).rev() {
            let mut s = if i == k { 1.0 } else { 0.0 };
            for j in (i + 1)..=k {
                s -= r[j * n + i] * rinv[k * n + j];
            }
            rinv[k * n + i] = s / r[i * n + i];
        }
    }
    let s2 = sse / (m - n) as f64;
    let out: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = (0..n).map(|k| rinv[k * n + i] * rinv[k * n + i]).sum();
            theta[i] * sqrt(s2 * d)
        })
        .collect();
    out.iter().all(|x| x.is_finite()).then_some(out)
}

/// Damped Gauss-Newton from `init` (natural units, within bounds).
pub fn levenberg_marquardt(problem: &FitProblem, init: &[f64]) -> Result<FitOutcome, FitError> {
    let n = problem.n_free();
    if init.len() != n {
        return Err(FitError::WrongDimension { expected: n, got: init.len() });
    }
    if let Some(index) = problem.bounds.contains(init) {
        return Err(FitError::InitOutOfBounds { index, value: init[index] });
    }
    let obj = Objective::new(problem);
    let m = obj.m();
    if m <= n {
        return Err(FitError::EmptyHistogram);
    }
    let lo: Vec<f64> = problem.bounds.lower.iter().map(|&x| log(x)).collect();
    let hi: Vec<f64> = problem.bounds.upper.iter().map(|&x| log(x)).collect();

    let mut phi: Vec<f64> = init.iter().map(|&x| log(x)).collect();
    let mut theta: Vec<f64> = init.to_vec();
    let mut r = obj.residuals(&theta);
    let mut sse = sum_sq(&r);
    let mut trace = vec![sse];
    let mut diag = vec![0.0f64; n];
    let mut peak = vec![0.0f64; n];
    let mut lambda = 1e-3;
    let mut nu = 2.0;
    let mut iterations = 0;
    let termination;
    let mut jac = obj.jacobian(&theta);
    let mut grad_max;

    if !sse.is_finite() {
        termination = Termination::NonFiniteObjective;
        grad_max = f64::INFINITY;
    } else {
        loop {
            let (g, free) = scaled_gradient(&jac, &r, &phi, &lo, &hi, obj.residual_floor());
            grad_max = g;
            if grad_max < GRADIENT_TOLERANCE {
                termination = Termination::GradientTolerance;
                break;
            }
            if iterations >= MAX_ITERATIONS {
                termination = Termination::IterationLimit;
                break;
            }
            iterations += 1;

            let cols: Vec<usize> = (0..n).filter(|&j| free[j]).collect();
            let k = cols.len();
            let mut sub = Vec::with_capacity(m * k);
            for &j in &cols {
                let col = &jac[j * m..(j + 1) * m];
                let c = norm2(col);
                peak[j] = peak[j].max(c);
                diag[j] = c.max(DIAG_MEMORY * peak[j]);
                sub.extend_from_slice(col);
            }
            let qr = Qr::new(sub, m, k);
            let mut z = r.clone();
            qr.apply_qt(&mut z);
            z.truncate(k);
            let rmat = qr.r();

            let mut accepted = false;
            let mut stop = None;
            loop {
                // min ‖[R; √λ D] δ + [z; 0]‖
                let mut aug = vec![0.0; 2 * k * k];
                for c in 0..k {
                    for i in 0..k {
                        aug[c * 2 * k + i] = rmat[c * k + i];
                    }
                    aug[c * 2 * k + k + c] = sqrt(lambda) * diag[cols[c]].max(f64::MIN_POSITIVE);
                }
                let mut rhs = vec![0.0; 2 * k];
                for i in 0..k {
                    rhs[i] = -z[i];
                }
                let step = Qr::new(aug, 2 * k, k).solve(&rhs);
                let Some(step) = step else {
                    lambda *= nu;
                    nu *= 2.0;
                    if lambda > 1e30 {
                        stop = Some(Termination::DampingLimit);
                        break;
                    }
                    continue;
                };
                let mut phi_new = phi.clone();
                for (c, &j) in cols.iter().enumerate() {
                    phi_new[j] = (phi[j] + step[c]).clamp(lo[j], hi[j]);
                }
                let mut theta_new: Vec<f64> = phi_new.iter().map(|&x| exp(x)).collect();
                problem.bounds.clamp(&mut theta_new);
                let r_new = obj.residuals(&theta_new);
                let sse_new = sum_sq(&r_new);

                // predicted decrease of the linear model, using the clamped step
                let mut lin = z.clone();
                for (c, &j) in cols.iter().enumerate() {
                    let d = phi_new[j] - phi[j];
                    for i in 0..=c {
                        lin[i] += rmat[c * k + i] * d;
                    }
                }
                let predicted = sum_sq(&z) - sum_sq(&lin);

                if sse_new.is_finite() && sse_new < sse {
                    let rho = if predicted > 0.0 { (sse - sse_new) / predicted } else { 1.0 };
                    let x = 2.0 * rho - 1.0;
                    let shrink = 1.0 - x * x * x;
                    lambda *= shrink.max(1.0 / 3.0);
                    lambda = lambda.max(1e-300);
                    nu = 2.0;
                    let rel = (sse - sse_new) / sse;
                    phi = phi_new;
                    theta = theta_new;
                    r = r_new;
                    sse = sse_new;
                    trace.push(sse);
                    accepted = true;
                    if rel < SSE_TOLERANCE {
                        stop = Some(Termination::SseStagnation);
                    }
                    break;
                }
                lambda *= nu;
                nu *= 2.0;
                if lambda > 1e30 {
                    stop = Some(Termination::DampingLimit);
                    break;
                }
            }
            if accepted {
                jac = obj.jacobian(&theta);
            }
            if let Some(s) = stop {
                let (g, _) = scaled_gradient(&jac, &r, &phi, &lo, &hi, obj.residual_floor());
                grad_max = g;
                if grad_max >= GRADIENT_TOLERANCE && iterations < MAX_ITERATIONS {
                    let mut state = State { phi, theta, r, sse, jac };
                    grad_max = newton_polish(&obj, problem, &mut state, &lo, &hi, &mut iterations, &mut trace);
                    theta = state.theta;
                    sse = state.sse;
                }
                termination = if grad_max < GRADIENT_TOLERANCE {
                    Termination::GradientTolerance
                } else {
                    s
                };
                break;
            }
        }
    }

    let converged = termination == Termination::GradientTolerance;
    let mut params = problem.params_from_free(&theta);
    if let ModelParams::MultiExp(me) = &mut params {
        me.sort_components();
    }
    let free = problem.free_from_params(&params);
    let std_errors = if sse.is_finite() {
        // columns follow the unsorted order; reorder by recomputing at sorted theta
        let jac_sorted = obj.jacobian(&free);
        std_errors(&jac_sorted, m, n, &free, sse)
    } else {
        None
    };
    Ok(FitOutcome {
        params,
        free,
        std_errors,
        sse,
        converged,
        n_iterations: iterations,
        termination,
        max_scaled_gradient: grad_max,
        start_index: 0,
        failures: if converged { 0 } else { 1 },
        sse_trace: trace,
        starts: Vec::new(),
    })
}

/// Waiting time at which the normalized cumulative histogram reaches `q`.
fn quantile_time(t: &[f64], h: &[f64], q: f64) -> f64 {
    let total: f64 = h.iter().sum();
    let mut acc = 0.0;
    for (ti, hi) in t.iter().zip(h) {
        acc += hi;
        if acc >= q * total {
            return *ti;
        }
    }
    *t.last().unwrap()
}

/// Deterministic starting point derived from the histogram shape.
pub fn init_heuristic(problem: &FitProblem) -> Vec<f64> {
    let hist = &problem.histogram;
    let m = problem.n_bins().max(1);
    let w = hist.bin_width;
    let n = hist.n_total as f64;
    let t: Vec<f64> = (0..m).map(|i| hist.bin_center(i)).collect();
    let h: Vec<f64> = hist.counts[..m].iter().map(|&c| c as f64 / n).collect();
    let window = m as f64 * w;

    let tail = (m / 20).max(1);
    let v0 = h[m - tail..].iter().sum::<f64>() / tail as f64 / w;
    let trap_mass = (1.0 - v0 * window).max(0.05);
    // percentiles of the trap part alone; the dark floor would drag them
    // towards the end of the window. Unclipped, so bin noise averages out.
    let excess: Vec<f64> = h.iter().map(|&x| x - v0 * w).collect();
    let excess = if excess.iter().sum::<f64>() > 0.0 { excess } else { h.clone() };

    let mut theta = match problem.family {
        ModelFamily::MultiExp => {
            let k = problem.n_components;
            let lo = 4.0 * w;
            let hi = quantile_time(&t, &excess, 0.99).max(2.0 * lo);
            let mut out = Vec::with_capacity(2 * k + 1);
            for i in 0..k {
                let frac = if k == 1 { 0.5 } else { i as f64 / (k - 1) as f64 };
                out.push(trap_mass / k as f64);
                out.push(lo * libm::pow(hi / lo, frac));
            }
            out.push(v0);
            out
        }
        ModelFamily::Sinhc => {
            let tau_min = t[0];
            let tau_max = quantile_time(&t, &excess, 0.95).max(4.0 * tau_min);
            let c = trap_mass / log(tau_max / tau_min);
            match problem.sinhc_axis {
                SinhcAxis::Limits => vec![c, tau_min, tau_max, v0],
                SinhcAxis::Rates => {
                    let (g0, d) = crate::models::limits_to_rates(tau_min, tau_max);
                    vec![c, g0, d, v0]
                }
            }
        }
        ModelFamily::PowerLaw => {
            let first = (h[0] / w - v0).max(h[0] / w * 0.5);
            let d = first * (t[0] + problem.power_law_offset);
            vec![d, 1.0, v0]
        }
    };
    // keep inside the box (v0 may be 0 on a short histogram)
    let b = &problem.bounds;
    for (j, x) in theta.iter_mut().enumerate() {
        let lo = b.lower[j];
        let hi = b.upper[j];
        if !(x.is_finite() && *x > 0.0) {
            *x = libm::sqrt(lo * hi).max(lo);
        }
        *x = x.clamp(lo, hi);
    }
    theta
}

/// Starting point `index` of a multistart run: the heuristic itself for
/// `index == 0`, otherwise a log-uniform perturbation of it.
pub fn start_point(problem: &FitProblem, seed: u64, index: usize) -> Vec<f64> {
    let mut theta = init_heuristic(problem);
    if index == 0 {
        return theta;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let spread = log(START_SPREAD);
    // rates are perturbed through the limits, which keeps Δ < γ₀
    let rates = problem.family == ModelFamily::Sinhc && problem.sinhc_axis == SinhcAxis::Rates;
    if rates {
        let (lo, hi) = crate::models::rates_to_limits(theta[1], theta[2]);
        theta[1] = lo;
        theta[2] = hi;
    }
    for x in theta.iter_mut() {
        let u = crate::sim::uniform01(&mut rng);
        *x *= exp((2.0 * u - 1.0) * spread);
    }
    if rates {
        let (lo, hi) = (theta[1].min(theta[2]), theta[1].max(theta[2]));
        let (g0, d) = crate::models::limits_to_rates(lo, hi);
        theta[1] = g0;
        theta[2] = d;
    }
    problem.bounds.clamp(&mut theta);
    theta
}

/// True when the fitted parameters do not determine the model: a component
/// sits on a bound or two exponentials coincide.
pub fn is_degenerate(problem: &FitProblem, outcome: &FitOutcome) -> bool {
    let b = &problem.bounds;
    let at_bound = |j: usize, x: f64| {
        let (lo, hi) = (b.lower[j], b.upper[j]);
        x <= lo * (1.0 + 1e-9) || x >= hi * (1.0 - 1e-9)
    };
    let n = outcome.free.len();
    // the dark rate (last) is allowed to sit on its lower bound
    if (0..n - 1).any(|j| at_bound(j, outcome.free[j])) {
        return true;
    }
    match &outcome.params {
        ModelParams::MultiExp(me) => me
            .components
            .windows(2)
            .any(|w| w[1].tau < w[0].tau * MERGED_LIFETIME_RATIO),
        ModelParams::Sinhc(s) => s.tau_max() < s.tau_min() * MERGED_LIFETIME_RATIO,
        ModelParams::PowerLaw(_) => false,
    }
}

/// Runs one start and classifies it, without the low-R² check (which needs
/// the best SSE across starts).
pub fn run_start(problem: &FitProblem, seed: u64, index: usize) -> (StartDiagnostic, Option<FitOutcome>) {
    let init = start_point(problem, seed, index);
    match levenberg_marquardt(problem, &init) {
        Ok(mut out) => {
            out.start_index = index;
            let failure = if !out.converged {
                Some(FailureKind::NotConverged)
            } else if is_degenerate(problem, &out) {
                Some(FailureKind::Degenerate)
            } else {
                None
            };
            let diag = StartDiagnostic {
                index,
                sse: out.sse,
                converged: out.converged,
                n_iterations: out.n_iterations,
                termination: out.termination,
                failure,
            };
            (diag, Some(out))
        }
        Err(_) => (
            StartDiagnostic {
                index,
                sse: f64::INFINITY,
                converged: false,
                n_iterations: 0,
                termination: Termination::NonFiniteObjective,
                failure: Some(FailureKind::NotConverged),
            },
            None,
        ),
    }
}

/// Reduces per-start results (in start order) to the multistart outcome.
pub fn select_best(
    results: Vec<(StartDiagnostic, Option<FitOutcome>)>,
) -> Result<FitOutcome, FitError> {
    let mut best: Option<usize> = None;
    for (i, (d, _)) in results.iter().enumerate() {
        if d.failure.is_none() && best.is_none_or(|b| d.sse < results[b].0.sse) {
            best = Some(i);
        }
    }
    let mut diags: Vec<StartDiagnostic> = results.iter().map(|(d, _)| d.clone()).collect();
    let Some(best) = best else {
        return Err(FitError::AllStartsFailed { starts: diags });
    };
    let best_sse = diags[best].sse;
    for d in diags.iter_mut() {
        if d.failure.is_none() && d.sse > best_sse * (1.0 + LOW_R2_SSE_SLACK) {
            d.failure = Some(FailureKind::LowRSquared);
        }
    }
    let failures = diags.iter().filter(|d| d.failure.is_some()).count();
    let mut outcome = results.into_iter().nth(best).and_then(|(_, o)| o).expect("best start has an outcome");
    outcome.failures = failures;
    outcome.starts = diags;
    Ok(outcome)
}

/// Runs `n_starts` fits and keeps the lowest-SSE good one; ties go to the
/// lowest start index.
pub fn multistart_fit(problem: &FitProblem, n_starts: usize, seed: u64) -> Result<FitOutcome, FitError> {
    let n_starts = n_starts.max(1);
    let results = (0..n_starts).map(|k| run_start(problem, seed, k)).collect();
    select_best(results)
}
