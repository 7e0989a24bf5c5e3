//! From interval streams to the trimmed waiting-time histogram.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::sim::DetectorConfig;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExtractError {
    #[error("malformed stream: interval {index} ({cycles} cycles) runs past the period end")]
    MalformedStream { index: usize, cycles: u64 },
    #[error("no extra count survives the trim")]
    EmptyHistogram,
    #[error("histogram geometry differs (bin width or offset)")]
    GeometryMismatch,
}

/// Pulse-to-extra intervals of a stream and the number of periods seen.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExtraIntervals {
    pub cycles: Vec<u32>,
    pub n_periods: u64,
}

/// Recovers the afterpulse/dark intervals from a stream.
///
/// Elapsed cycles are accumulated from the last pulse count. An interval that
/// brings the running total into the period-end window closes the period.
/// Only the first interval of a period that does not close it (pulse to
/// extra) is kept; later ones (extra to extra, extra to pulse) are dropped.
/// A trailing partial period is counted as observed.
pub fn extract_extra_intervals(
    intervals: &[u32],
    config: &DetectorConfig,
) -> Result<ExtraIntervals, ExtractError> {
    let limit = config.period_cycles as u64 + config.period_jitter_cycles as u64;
    let mut out = ExtraIntervals::default();
    let mut elapsed = 0u64;
    for (index, &iv) in intervals.iter().enumerate() {
        let iv = iv as u64;
        let total = elapsed + iv;
        if iv > limit || total > limit {
            return Err(ExtractError::MalformedStream { index, cycles: iv });
        }
        if config.is_period_end(total) {
            out.n_periods += 1;
            elapsed = 0;
        } else {
            if elapsed == 0 {
                out.cycles.push(iv as u32);
            }
            elapsed = total;
        }
    }
    if elapsed > 0 {
        out.n_periods += 1;
    }
    Ok(out)
}

/// Raw per-bin counts of extra-count waiting times after the trim.
///
/// Bin `i` covers cycles `[trim_bins + i, trim_bins + i + 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseHistogram {
    pub bin_width: f64,
    pub t_offset: f64,
    pub n_total: u64,
    pub n_periods: u64,
    pub p_ad_hat: f64,
    /// Extra counts not in any bin: below the trim or past the period cap.
    #[serde(default)]
    pub n_excluded: u64,
    pub counts: Vec<u64>,
}

impl ResponseHistogram {
    /// Histogram with no events and no periods; the identity of
    /// [`merge_histograms`].
    pub fn empty(config: &DetectorConfig) -> Self {
        Self {
            bin_width: config.tdc_cycle,
            t_offset: config.t_offset(),
            n_total: 0,
            n_periods: 0,
            p_ad_hat: 0.0,
            n_excluded: 0,
            counts: Vec::new(),
        }
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    /// Bin center on the fitted time axis (0 at the first bin's left edge).
    pub fn bin_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.bin_width
    }

    /// Bin center measured from the avalanche.
    pub fn bin_center_from_avalanche(&self, i: usize) -> f64 {
        self.t_offset + self.bin_center(i)
    }

    /// Length of the histogram domain, µs.
    pub fn window(&self) -> f64 {
        self.n_bins() as f64 * self.bin_width
    }

    /// `counts / n_total`.
    pub fn normalized(&self) -> Vec<f64> {
        let n = self.n_total as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    fn refresh_p_ad(&mut self) {
        self.p_ad_hat = if self.n_periods == 0 {
            0.0
        } else {
            (self.n_total + self.n_excluded) as f64 / self.n_periods as f64
        };
    }

    /// Same histogram with every count multiplied by `k`.
    pub fn scaled(&self, k: u64) -> Self {
        let mut h = self.clone();
        h.counts.iter_mut().for_each(|c| *c *= k);
        h.n_total *= k;
        h.n_excluded *= k;
        h.n_periods *= k;
        h
    }

    /// FNV-1a hash over geometry and counts; identifies the data a fit used.
    pub fn fingerprint(&self) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(PRIME);
            }
        };
        feed(&self.bin_width.to_le_bytes());
        feed(&self.t_offset.to_le_bytes());
        feed(&self.n_periods.to_le_bytes());
        for c in &self.counts {
            feed(&c.to_le_bytes());
        }
        h
    }
}

/// Bins extra intervals by raw cycle value, dropping cycles below
/// `trim_bins`. The domain ends at the largest surviving cycle, capped at
/// `period_cycles − 1`.
pub fn build_histogram(
    extras: &ExtraIntervals,
    config: &DetectorConfig,
) -> Result<ResponseHistogram, ExtractError> {
    let trim = config.trim_bins;
    let cap = config.period_cycles - 1;
    let max = extras
        .cycles
        .iter()
        .copied()
        .filter(|&c| c >= trim && c <= cap)
        .max()
        .ok_or(ExtractError::EmptyHistogram)?;
    let mut counts = vec![0u64; (max - trim + 1) as usize];
    let mut n_excluded = 0;
    for &c in &extras.cycles {
        if c >= trim && c <= cap {
            counts[(c - trim) as usize] += 1;
        } else {
            n_excluded += 1;
        }
    }
    let n_total = counts.iter().sum();
    let mut h = ResponseHistogram {
        bin_width: config.tdc_cycle,
        t_offset: config.t_offset(),
        n_total,
        n_periods: extras.n_periods,
        p_ad_hat: 0.0,
        n_excluded,
        counts,
    };
    h.refresh_p_ad();
    Ok(h)
}

/// Extraction followed by binning.
pub fn histogram_from_intervals(
    intervals: &[u32],
    config: &DetectorConfig,
) -> Result<ResponseHistogram, ExtractError> {
    build_histogram(&extract_extra_intervals(intervals, config)?, config)
}

/// Per-bin sum of two histograms over the same geometry.
pub fn merge_histograms(
    a: &ResponseHistogram,
    b: &ResponseHistogram,
) -> Result<ResponseHistogram, ExtractError> {
    if a.bin_width != b.bin_width || a.t_offset != b.t_offset {
        return Err(ExtractError::GeometryMismatch);
    }
    let len = a.counts.len().max(b.counts.len());
    let counts = (0..len)
        .map(|i| a.counts.get(i).copied().unwrap_or(0) + b.counts.get(i).copied().unwrap_or(0))
        .collect();
    let mut h = ResponseHistogram {
        bin_width: a.bin_width,
        t_offset: a.t_offset,
        n_total: a.n_total + b.n_total,
        n_periods: a.n_periods + b.n_periods,
        p_ad_hat: 0.0,
        n_excluded: a.n_excluded + b.n_excluded,
        counts,
    };
    h.refresh_p_ad();
    Ok(h)
}
