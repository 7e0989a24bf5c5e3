//! Goodness-of-fit statistics over a [`ResponseHistogram`].
//!
//! `model_probs` are per-bin expected probabilities `q_i` (density at the
//! bin center times the bin width), one per histogram bin.

use alloc::vec::Vec;
use libm::sqrt;
use serde::{Deserialize, Serialize};

use crate::extract::ResponseHistogram;
use crate::models::ModelParams;
use crate::special::chi2_quantile;

/// Floor applied to `q_i` for χ² when a density underflows to exactly 0.
pub const EXPECTATION_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("{got} model probabilities for {expected} bins")]
    LengthMismatch { expected: usize, got: usize },
    #[error("R² undefined: observations are constant")]
    ConstantObservations,
    #[error("model probability at bin {bin} is {value}")]
    InvalidExpectation { bin: usize, value: f64 },
    #[error("histogram has no events")]
    EmptyHistogram,
    #[error("no degrees of freedom left ({bins} bins, {free} free parameters)")]
    NoDegreesOfFreedom { bins: usize, free: usize },
    #[error("dark fraction {0} exceeds 1")]
    InconsistentFit(f64),
}

fn check_lengths(hist: &ResponseHistogram, probs: &[f64]) -> Result<(), StatsError> {
    if hist.n_total == 0 {
        return Err(StatsError::EmptyHistogram);
    }
    if probs.len() != hist.n_bins() {
        return Err(StatsError::LengthMismatch {
            expected: hist.n_bins(),
            got: probs.len(),
        });
    }
    Ok(())
}

/// Expected per-bin probabilities of a model over the histogram bins.
pub fn model_probabilities(hist: &ResponseHistogram, params: &ModelParams) -> Vec<f64> {
    (0..hist.n_bins())
        .map(|i| params.pdf(hist.bin_center(i)) * hist.bin_width)
        .collect()
}

/// `1 − SSE/SS_tot` on the normalized histogram.
pub fn r_squared(hist: &ResponseHistogram, model_probs: &[f64]) -> Result<f64, StatsError> {
    check_lengths(hist, model_probs)?;
    let h = hist.normalized();
    let mean = h.iter().sum::<f64>() / h.len() as f64;
    let ss_tot: f64 = h.iter().map(|&x| (x - mean) * (x - mean)).sum();
    if ss_tot == 0.0 {
        return Err(StatsError::ConstantObservations);
    }
    let sse: f64 = h
        .iter()
        .zip(model_probs)
        .map(|(&o, &q)| (o - q) * (o - q))
        .sum();
    Ok(1.0 - sse / ss_tot)
}

/// Pearson χ² with every bin a cell, and `dof = bins − n_free − 1`.
pub fn chi2_statistic(
    hist: &ResponseHistogram,
    model_probs: &[f64],
    n_free: usize,
) -> Result<(f64, usize), StatsError> {
    check_lengths(hist, model_probs)?;
    let bins = hist.n_bins();
    if bins <= n_free + 1 {
        return Err(StatsError::NoDegreesOfFreedom { bins, free: n_free });
    }
    let n = hist.n_total as f64;
    let mut chi2 = 0.0;
    for (bin, (&o, &q)) in hist.counts.iter().zip(model_probs).enumerate() {
        if !(q >= 0.0) || !q.is_finite() {
            return Err(StatsError::InvalidExpectation { bin, value: q });
        }
        let e = n * q.max(EXPECTATION_FLOOR);
        let d = o as f64 - e;
        chi2 += d * d / e;
    }
    Ok((chi2, bins - n_free - 1))
}

/// Upper-tail critical value of χ² at the given confidence.
pub fn chi2_critical(dof: usize, confidence: f64) -> f64 {
    assert!(dof >= 1, "dof must be positive");
    chi2_quantile(confidence, dof as f64)
}

/// Per-bin residuals with their ±2σ band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualBands {
    /// `O_i/n − q_i`.
    pub residuals: Vec<f64>,
    /// `2 √(q_i (1 − q_i) / n)`.
    pub two_sigma: Vec<f64>,
}

impl ResidualBands {
    pub fn is_flagged(&self, i: usize) -> bool {
        libm::fabs(self.residuals[i]) > self.two_sigma[i]
    }

    pub fn flagged(&self) -> Vec<bool> {
        (0..self.residuals.len()).map(|i| self.is_flagged(i)).collect()
    }

    pub fn n_flagged(&self) -> usize {
        (0..self.residuals.len()).filter(|&i| self.is_flagged(i)).count()
    }

    pub fn fraction_flagged(&self) -> f64 {
        self.n_flagged() as f64 / self.residuals.len() as f64
    }

    /// Longest run of consecutive flagged bins within `range`.
    pub fn longest_flagged_run(&self, range: core::ops::Range<usize>) -> usize {
        let mut best = 0;
        let mut run = 0;
        for i in range {
            if self.is_flagged(i) {
                run += 1;
                best = best.max(run);
            } else {
                run = 0;
            }
        }
        best
    }
}

pub fn residual_bounds(
    hist: &ResponseHistogram,
    model_probs: &[f64],
) -> Result<ResidualBands, StatsError> {
    check_lengths(hist, model_probs)?;
    let n = hist.n_total as f64;
    let mut residuals = Vec::with_capacity(model_probs.len());
    let mut two_sigma = Vec::with_capacity(model_probs.len());
    for (bin, (&o, &q)) in hist.counts.iter().zip(model_probs).enumerate() {
        if !(q >= 0.0) || !q.is_finite() {
            return Err(StatsError::InvalidExpectation { bin, value: q });
        }
        residuals.push(o as f64 / n - q);
        two_sigma.push(2.0 * sqrt(q * (1.0 - q).max(0.0) / n));
    }
    Ok(ResidualBands {
        residuals,
        two_sigma,
    })
}

/// Fraction of the fitted window mass carried by the dark term.
pub fn dark_fraction(params: &ModelParams, hist: &ResponseHistogram) -> f64 {
    let total: f64 = model_probabilities(hist, params).iter().sum();
    params.dark_rate() * hist.window() / total
}

/// Afterpulse probability per period: the observed extra-count fraction
/// minus its dark share, `P_a = p̂_ad (1 − f_dark)`, where `f_dark` is the
/// dark term's share of the model mass over the histogram window.
pub fn afterpulse_probability(params: &ModelParams, hist: &ResponseHistogram) -> Result<f64, StatsError> {
    let f_dark = dark_fraction(params, hist);
    if !(f_dark <= 1.0) {
        return Err(StatsError::InconsistentFit(f_dark));
    }
    Ok(hist.p_ad_hat * (1.0 - f_dark.max(0.0)))
}

/// Everything reported for one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofReport {
    pub r_squared: f64,
    pub one_minus_r2: f64,
    pub chi2: f64,
    pub chi2_crit: f64,
    pub chi2_normalized: f64,
    pub dof: usize,
    pub p_a: f64,
    pub residuals: Vec<f64>,
    pub sigma_bounds: Vec<f64>,
}

impl GofReport {
    pub fn bands(&self) -> ResidualBands {
        ResidualBands {
            residuals: self.residuals.clone(),
            two_sigma: self.sigma_bounds.clone(),
        }
    }
}

/// Full report at 95% confidence.
pub fn gof_report(
    hist: &ResponseHistogram,
    params: &ModelParams,
    n_free: usize,
) -> Result<GofReport, StatsError> {
    let probs = model_probabilities(hist, params);
    let r2 = r_squared(hist, &probs)?;
    let (chi2, dof) = chi2_statistic(hist, &probs, n_free)?;
    let crit = chi2_critical(dof, 0.95);
    let bands = residual_bounds(hist, &probs)?;
    let p_a = afterpulse_probability(params, hist)?;
    Ok(GofReport {
        r_squared: r2,
        one_minus_r2: 1.0 - r2,
        chi2,
        chi2_crit: crit,
        chi2_normalized: chi2 / crit,
        dof,
        p_a,
        residuals: bands.residuals,
        sigma_bounds: bands.two_sigma,
    })
}
