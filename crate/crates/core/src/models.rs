//! Waiting-time densities of afterpulses plus dark counts.
//!
//! Time is in microseconds measured from the first histogram bin after the
//! trim (that is, from `trim_bins` TDC cycles after the avalanche).
//! Densities are per microsecond. All parameter sets include the dark
//! density `v`, a constant added on top of the trap term.
//!
//! Three families are supported:
//!
//! - sum of exponentials, one per deep level:
//!   `p(t) = Σ (u_i/τ_i) e^{−t/τ_i} + v`
//! - log-uniform continuum of levels between `τ_min` and `τ_max`, giving the
//!   hyperbolic-sinc form `p(t) = 2C sinh(Δt)/t · e^{−γ₀t} + v`
//! - power law `p(t) = D (t + t_d)^{−α} + v`
//!
//! In the continuum, the decay rate of a level follows the Arrhenius law
//! `γ(ε) = B e^{−(ε−ε₀)/kT}` and the populated level density is constant in
//! `ln τ`. Only `γ₀ = (γ_min + γ_max)/2`, `Δ = (γ_min − γ_max)/2` and the
//! density scale `C` survive in the waiting-time distribution; `B`, `ε₀` and
//! `T` cannot be recovered from it and have no runtime representation.

use alloc::vec;
use alloc::vec::Vec;
use libm::{exp, expm1, log, pow, sqrt};
use serde::{Deserialize, Serialize};

use crate::special::e1_pair_difference;

/// Model family tag, serialized as `multi_exp`, `sinhc` or `power_law`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    MultiExp,
    Sinhc,
    PowerLaw,
}

impl ModelFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::MultiExp => "multi_exp",
            ModelFamily::Sinhc => "sinhc",
            ModelFamily::PowerLaw => "power_law",
        }
    }
}

impl core::str::FromStr for ModelFamily {
    type Err = &'static str;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "multi_exp" => Ok(ModelFamily::MultiExp),
            "sinhc" => Ok(ModelFamily::Sinhc),
            "power_law" => Ok(ModelFamily::PowerLaw),
            _ => Err("expected one of multi_exp, sinhc, power_law"),
        }
    }
}

impl core::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One deep level: release probability mass `u` and lifetime `tau` (µs).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpComponent {
    pub u: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiExpParams {
    pub components: Vec<ExpComponent>,
    pub v: f64,
}

impl MultiExpParams {
    pub fn new(components: Vec<ExpComponent>, v: f64) -> Self {
        let mut p = Self { components, v };
        p.sort_components();
        p
    }

    /// Restores the canonical strictly increasing `τ` order.
    pub fn sort_components(&mut self) {
        self.components
            .sort_by(|a, b| a.tau.partial_cmp(&b.tau).unwrap_or(core::cmp::Ordering::Equal));
    }

    pub fn total_mass(&self) -> f64 {
        self.components.iter().map(|c| c.u).sum()
    }

    pub fn is_valid(&self) -> bool {
        !self.components.is_empty()
            && self.components.iter().all(|c| c.u > 0.0 && c.tau > 0.0)
            && self.components.windows(2).all(|w| w[0].tau < w[1].tau)
            && self.v >= 0.0
    }
}

/// Hyperbolic-sinc continuum parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinhcParams {
    #[serde(rename = "C")]
    pub c: f64,
    /// Mean of the limiting rates, µs⁻¹.
    pub gamma0: f64,
    /// Half-spread of the limiting rates, µs⁻¹.
    pub delta: f64,
    pub v: f64,
}

impl SinhcParams {
    pub fn from_limits(c: f64, tau_min: f64, tau_max: f64, v: f64) -> Self {
        let (gamma0, delta) = limits_to_rates(tau_min, tau_max);
        Self { c, gamma0, delta, v }
    }

    pub fn tau_min(&self) -> f64 {
        1.0 / (self.gamma0 + self.delta)
    }

    pub fn tau_max(&self) -> f64 {
        1.0 / (self.gamma0 - self.delta)
    }

    /// Trap mass of the whole continuum, `C ln(τ_max/τ_min)`.
    pub fn total_mass(&self) -> f64 {
        self.c * log((self.gamma0 + self.delta) / (self.gamma0 - self.delta))
    }

    pub fn is_valid(&self) -> bool {
        self.c > 0.0 && self.delta > 0.0 && self.delta < self.gamma0 && self.v >= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawParams {
    #[serde(rename = "D")]
    pub d: f64,
    pub alpha: f64,
    pub t_d: f64,
    pub v: f64,
}

impl PowerLawParams {
    pub fn is_valid(&self) -> bool {
        self.d > 0.0 && self.alpha > 0.0 && self.t_d >= 0.0 && self.v >= 0.0
    }
}

/// A parameter set of any family, tagged by `family` in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelParams {
    MultiExp(MultiExpParams),
    Sinhc(SinhcParams),
    PowerLaw(PowerLawParams),
}

impl ModelParams {
    pub fn family(&self) -> ModelFamily {
        match self {
            ModelParams::MultiExp(_) => ModelFamily::MultiExp,
            ModelParams::Sinhc(_) => ModelFamily::Sinhc,
            ModelParams::PowerLaw(_) => ModelFamily::PowerLaw,
        }
    }

    pub fn pdf(&self, t: f64) -> f64 {
        match self {
            ModelParams::MultiExp(p) => multi_exp_pdf(t, p),
            ModelParams::Sinhc(p) => sinhc_pdf(t, p),
            ModelParams::PowerLaw(p) => power_law_pdf(t, p),
        }
    }

    pub fn dark_rate(&self) -> f64 {
        match self {
            ModelParams::MultiExp(p) => p.v,
            ModelParams::Sinhc(p) => p.v,
            ModelParams::PowerLaw(p) => p.v,
        }
    }

    pub fn is_valid(&self) -> bool {
        match self {
            ModelParams::MultiExp(p) => p.is_valid(),
            ModelParams::Sinhc(p) => p.is_valid(),
            ModelParams::PowerLaw(p) => p.is_valid(),
        }
    }

    /// Parameters in Jacobian order (see [`model_jacobian`]).
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            ModelParams::MultiExp(p) => {
                let mut out = Vec::with_capacity(2 * p.components.len() + 1);
                for c in &p.components {
                    out.push(c.u);
                    out.push(c.tau);
                }
                out.push(p.v);
                out
            }
            ModelParams::Sinhc(p) => vec![p.c, p.gamma0, p.delta, p.v],
            ModelParams::PowerLaw(p) => vec![p.d, p.alpha, p.t_d, p.v],
        }
    }

    /// Inverse of [`ModelParams::to_vec`]. Multi-exp components are taken
    /// as given, unsorted.
    pub fn from_vec(family: ModelFamily, values: &[f64]) -> Self {
        match family {
            ModelFamily::MultiExp => {
                let n = (values.len() - 1) / 2;
                let components = (0..n)
                    .map(|i| ExpComponent {
                        u: values[2 * i],
                        tau: values[2 * i + 1],
                    })
                    .collect();
                ModelParams::MultiExp(MultiExpParams {
                    components,
                    v: values[2 * n],
                })
            }
            ModelFamily::Sinhc => ModelParams::Sinhc(SinhcParams {
                c: values[0],
                gamma0: values[1],
                delta: values[2],
                v: values[3],
            }),
            ModelFamily::PowerLaw => ModelParams::PowerLaw(PowerLawParams {
                d: values[0],
                alpha: values[1],
                t_d: values[2],
                v: values[3],
            }),
        }
    }
}

pub fn multi_exp_pdf(t: f64, p: &MultiExpParams) -> f64 {
    p.components
        .iter()
        .map(|c| c.u / c.tau * exp(-t / c.tau))
        .sum::<f64>()
        + p.v
}

/// Trap part of the sinhc density, without `v`.
///
/// Written as `C/t · e^{−(γ₀−Δ)t} · (1 − e^{−2Δt})`, which never overflows
/// and keeps full precision as `Δt → 0`.
fn sinhc_trap(t: f64, p: &SinhcParams) -> f64 {
    if t == 0.0 {
        return 2.0 * p.c * p.delta;
    }
    p.c / t * exp(-(p.gamma0 - p.delta) * t) * -expm1(-2.0 * p.delta * t)
}

pub fn sinhc_pdf(t: f64, p: &SinhcParams) -> f64 {
    sinhc_trap(t, p) + p.v
}

pub fn power_law_pdf(t: f64, p: &PowerLawParams) -> f64 {
    p.d * pow(t + p.t_d, -p.alpha) + p.v
}

/// Limiting lifetimes to `(γ₀, Δ)`.
pub fn limits_to_rates(tau_min: f64, tau_max: f64) -> (f64, f64) {
    let fast = 1.0 / tau_min;
    let slow = 1.0 / tau_max;
    (0.5 * (fast + slow), 0.5 * (fast - slow))
}

/// `(γ₀, Δ)` to limiting lifetimes `(τ_min, τ_max)`.
pub fn rates_to_limits(gamma0: f64, delta: f64) -> (f64, f64) {
    (1.0 / (gamma0 + delta), 1.0 / (gamma0 - delta))
}

/// Replaces the continuum by `n` levels on a midpoint grid in `ln τ`, each
/// carrying an equal share of the total mass.
pub fn discretize_continuum(p: &SinhcParams, n: usize) -> MultiExpParams {
    assert!(n >= 1, "need at least one level");
    let ln_lo = log(p.tau_min());
    let span = log(p.tau_max()) - ln_lo;
    let u = p.c * span / n as f64;
    let components = (0..n)
        .map(|i| ExpComponent {
            u,
            tau: exp(ln_lo + (i as f64 + 0.5) / n as f64 * span),
        })
        .collect();
    MultiExpParams {
        components,
        v: p.v,
    }
}

/// Probability mass of the trap (non-dark) term over `[t_a, t_b]`;
/// `t_b` may be `+∞`.
pub fn trap_mass(p: &ModelParams, t_a: f64, t_b: f64) -> f64 {
    debug_assert!(t_a >= 0.0 && t_b > t_a);
    match p {
        ModelParams::MultiExp(m) => m
            .components
            .iter()
            .map(|c| {
                let tail_b = if t_b.is_finite() { exp(-t_b / c.tau) } else { 0.0 };
                c.u * (exp(-t_a / c.tau) - tail_b)
            })
            .sum(),
        ModelParams::Sinhc(s) => {
            let slow = s.gamma0 - s.delta;
            let fast = s.gamma0 + s.delta;
            s.c * (e1_pair_difference(slow, fast, t_a) - e1_pair_difference(slow, fast, t_b))
        }
        ModelParams::PowerLaw(pl) => {
            let xa = t_a + pl.t_d;
            let xb = t_b + pl.t_d;
            let s = pl.alpha - 1.0;
            if xa == 0.0 && pl.alpha >= 1.0 {
                return f64::INFINITY;
            }
            if !xb.is_finite() {
                return if s > 0.0 { pl.d * pow(xa, -s) / s } else { f64::INFINITY };
            }
            // D x_a^{-s} (1 − (x_b/x_a)^{-s}) / s, with the s → 0 limit D ln(x_b/x_a)
            let ln_ratio = log(xb / xa);
            let x = s * ln_ratio;
            if libm::fabs(x) < 1e-10 {
                pl.d * pow(xa, -s) * ln_ratio * (1.0 - 0.5 * x)
            } else {
                pl.d * pow(xa, -s) * -expm1(-x) / s
            }
        }
    }
}

/// Gradient of the density with respect to every parameter, in
/// [`ModelParams::to_vec`] order:
///
/// - multi-exp: `[u_1, τ_1, …, u_N, τ_N, v]`
/// - sinhc: `[C, γ₀, Δ, v]`
/// - power law: `[D, α, t_d, v]`
pub fn model_jacobian(t: f64, p: &ModelParams) -> Vec<f64> {
    let mut out = vec![0.0; p.to_vec().len()];
    model_jacobian_into(t, p, &mut out);
    out
}

/// Allocation-free form of [`model_jacobian`].
pub fn model_jacobian_into(t: f64, p: &ModelParams, out: &mut [f64]) {
    match p {
        ModelParams::MultiExp(m) => {
            for (i, c) in m.components.iter().enumerate() {
                let e = exp(-t / c.tau);
                out[2 * i] = e / c.tau;
                out[2 * i + 1] = c.u * e * (t - c.tau) / (c.tau * c.tau * c.tau);
            }
            out[2 * m.components.len()] = 1.0;
        }
        ModelParams::Sinhc(s) => {
            let e_slow = exp(-(s.gamma0 - s.delta) * t);
            let e_fast = exp(-(s.gamma0 + s.delta) * t);
            let trap = sinhc_trap(t, s);
            out[0] = trap / s.c;
            out[1] = -t * trap;
            // 2C cosh(Δt) e^{−γ₀t}
            out[2] = s.c * (e_slow + e_fast);
            out[3] = 1.0;
        }
        ModelParams::PowerLaw(pl) => {
            let x = t + pl.t_d;
            let base = pow(x, -pl.alpha);
            out[0] = base;
            out[1] = -log(x) * pl.d * base;
            out[2] = -pl.alpha * pl.d * base / x;
            out[3] = 1.0;
        }
    }
}

/// Geometric mean lifetime of a continuum, the `N = 1` discretization point.
pub fn geometric_mean_lifetime(p: &SinhcParams) -> f64 {
    sqrt(p.tau_min() * p.tau_max())
}
