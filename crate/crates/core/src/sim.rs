//! Monte Carlo detector under pulsed illumination.
//!
//! Every laser pulse produces a photocount at the start of its period. The
//! avalanche fills deep levels which release carriers later; a released
//! carrier after the trim offset causes an afterpulse. Dark counts form a
//! homogeneous Poisson process of rate `dark_rate`. After any count the
//! detector is blind for `dead_time_cycles`. Without cascading, at most one
//! extra count is registered per period: the earlier of the afterpulse and
//! the first dark count after dead-time expiry, provided the detector is
//! re-armed before the next pulse.
//!
//! Periods are simulated in fixed-size blocks. Block `b` draws from the
//! ChaCha8 stream `b` of the run seed, so blocks are independent and the
//! output does not depend on how blocks are scheduled.

use alloc::vec::Vec;
use libm::{floor, log};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::models::ExpComponent;

/// Number of periods per independently seeded block.
pub const BLOCK_PERIODS: u64 = 1 << 16;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid detector config: {0}")]
    InvalidConfig(&'static str),
    #[error("invalid trap model: {0}")]
    InvalidModel(&'static str),
    #[error("power-law trap models have no generative form")]
    NotGenerative,
    #[error("n_periods must be at least 1")]
    NoPeriods,
}

/// Timing constants of the detector and the TDC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// TDC cycles per laser period.
    pub period_cycles: u32,
    /// Length of one TDC cycle, µs.
    pub tdc_cycle: f64,
    pub dead_time_cycles: u32,
    /// Histogram bins removed from the start.
    pub trim_bins: u32,
    /// Half-width of the window around `period_cycles` read as a pulse count.
    pub period_jitter_cycles: u32,
}

impl Default for DetectorConfig {
    /// 25 kHz pulses on a 2.5 ns TDC, 45 ns dead time, first 22 bins trimmed.
    fn default() -> Self {
        Self {
            period_cycles: 16_000,
            tdc_cycle: 0.0025,
            dead_time_cycles: 18,
            trim_bins: 22,
            period_jitter_cycles: 2,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.tdc_cycle > 0.0 && self.tdc_cycle.is_finite()) {
            return Err(SimError::InvalidConfig("tdc_cycle must be positive"));
        }
        if self.dead_time_cycles == 0 {
            return Err(SimError::InvalidConfig("dead_time_cycles must be positive"));
        }
        if self.trim_bins <= self.dead_time_cycles {
            return Err(SimError::InvalidConfig("trim_bins must exceed dead_time_cycles"));
        }
        if self.period_cycles <= self.trim_bins {
            return Err(SimError::InvalidConfig("period_cycles must exceed trim_bins"));
        }
        if self.period_jitter_cycles >= self.period_cycles - self.trim_bins {
            return Err(SimError::InvalidConfig("period_jitter_cycles too large"));
        }
        Ok(())
    }

    /// Offset of the first surviving bin from the avalanche, µs.
    pub fn t_offset(&self) -> f64 {
        self.trim_bins as f64 * self.tdc_cycle
    }

    pub fn period(&self) -> f64 {
        self.period_cycles as f64 * self.tdc_cycle
    }

    /// Period lengths read as "count at the next pulse".
    pub fn is_period_end(&self, cycles: u64) -> bool {
        let p = self.period_cycles as u64;
        let j = self.period_jitter_cycles as u64;
        cycles + j >= p && cycles <= p + j
    }
}

/// Generative trap type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrapVariant {
    /// Independent deep levels; `u` is the per-avalanche release mass.
    DiscreteLevels { levels: Vec<ExpComponent> },
    /// Levels spread uniformly in `ln τ` between the limits.
    LogUniformContinuum {
        total_mass: f64,
        tau_min: f64,
        tau_max: f64,
    },
    /// Fit-only; rejected by the simulator.
    PowerLaw {
        #[serde(rename = "D")]
        d: f64,
        alpha: f64,
        t_d: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapModel {
    pub variant: TrapVariant,
    /// Dark count rate, counts/µs.
    pub dark_rate: f64,
    /// Whether afterpulse avalanches fill the traps again.
    #[serde(default)]
    pub cascade_enabled: bool,
}

impl TrapModel {
    pub fn continuum(total_mass: f64, tau_min: f64, tau_max: f64, dark_rate: f64) -> Self {
        Self {
            variant: TrapVariant::LogUniformContinuum {
                total_mass,
                tau_min,
                tau_max,
            },
            dark_rate,
            cascade_enabled: false,
        }
    }

    pub fn discrete(levels: Vec<ExpComponent>, dark_rate: f64) -> Self {
        Self {
            variant: TrapVariant::DiscreteLevels { levels },
            dark_rate,
            cascade_enabled: false,
        }
    }

    /// Per-avalanche probability that some trap releases a carrier.
    pub fn trap_mass(&self) -> f64 {
        match &self.variant {
            TrapVariant::DiscreteLevels { levels } => levels.iter().map(|l| l.u).sum(),
            TrapVariant::LogUniformContinuum { total_mass, .. } => *total_mass,
            TrapVariant::PowerLaw { .. } => f64::NAN,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dark_rate >= 0.0 && self.dark_rate.is_finite()) {
            return Err(SimError::InvalidModel("dark_rate must be non-negative"));
        }
        match &self.variant {
            TrapVariant::DiscreteLevels { levels } => {
                if levels.iter().any(|l| !(l.u >= 0.0) || !(l.tau > 0.0)) {
                    return Err(SimError::InvalidModel("levels need u >= 0 and tau > 0"));
                }
                if !(self.trap_mass() < 1.0) {
                    return Err(SimError::InvalidModel("level masses must sum below 1"));
                }
            }
            TrapVariant::LogUniformContinuum {
                total_mass,
                tau_min,
                tau_max,
            } => {
                // tau_min == tau_max is accepted as the single-level limit
                if !(*tau_min > 0.0 && tau_min <= tau_max && tau_max.is_finite()) {
                    return Err(SimError::InvalidModel("need 0 < tau_min <= tau_max"));
                }
                if !(*total_mass >= 0.0 && *total_mass < 1.0) {
                    return Err(SimError::InvalidModel("total_mass must lie in [0, 1)"));
                }
            }
            TrapVariant::PowerLaw { d, alpha, t_d } => {
                if !(*d > 0.0 && *alpha > 0.0 && *t_d >= 0.0) {
                    return Err(SimError::InvalidModel("need D > 0, alpha > 0, t_d >= 0"));
                }
            }
        }
        Ok(())
    }
}

/// Inter-count intervals as a TDC would report them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalStream {
    pub intervals: Vec<u32>,
    pub seed: u64,
    pub config_snapshot: DetectorConfig,
    pub truth: Option<TrapModel>,
}

/// Ground-truth bookkeeping of a simulation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationTally {
    pub n_periods: u64,
    /// Registered afterpulses (all of them, cascaded ones included).
    pub n_afterpulse: u64,
    pub n_dark: u64,
    /// Periods containing at least one extra count.
    pub n_periods_with_extra: u64,
    /// Periods whose first extra count was an afterpulse.
    pub n_periods_afterpulse_first: u64,
}

impl SimulationTally {
    pub fn merge(&mut self, other: &SimulationTally) {
        self.n_periods += other.n_periods;
        self.n_afterpulse += other.n_afterpulse;
        self.n_dark += other.n_dark;
        self.n_periods_with_extra += other.n_periods_with_extra;
        self.n_periods_afterpulse_first += other.n_periods_afterpulse_first;
    }

    /// Fraction of periods with an extra count.
    pub fn p_ad(&self) -> f64 {
        self.n_periods_with_extra as f64 / self.n_periods as f64
    }

    /// Fraction of periods whose extra count is an afterpulse.
    pub fn p_a(&self) -> f64 {
        self.n_periods_afterpulse_first as f64 / self.n_periods as f64
    }
}

/// Uniform draw on `[0, 1)` with 53 random bits.
#[inline]
pub fn uniform01<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Exponential draw with unit mean.
#[inline]
fn standard_exponential<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    -log(1.0 - uniform01(rng))
}

/// Release time (µs after the trim origin) of the carrier that causes an
/// afterpulse, or `None` when no trap releases.
pub fn sample_afterpulse_time<R: RngCore + ?Sized>(
    model: &TrapModel,
    rng: &mut R,
) -> Result<Option<f64>, SimError> {
    match &model.variant {
        TrapVariant::DiscreteLevels { levels } => {
            let u = uniform01(rng);
            let mut acc = 0.0;
            for level in levels {
                acc += level.u;
                if u < acc {
                    return Ok(Some(level.tau * standard_exponential(rng)));
                }
            }
            Ok(None)
        }
        TrapVariant::LogUniformContinuum {
            total_mass,
            tau_min,
            tau_max,
        } => {
            if uniform01(rng) >= *total_mass {
                return Ok(None);
            }
            let tau = tau_min * libm::pow(tau_max / tau_min, uniform01(rng));
            Ok(Some(tau * standard_exponential(rng)))
        }
        TrapVariant::PowerLaw { .. } => Err(SimError::NotGenerative),
    }
}

/// `floor(t / tdc_cycle)`.
pub fn quantize_to_tdc(t: f64, config: &DetectorConfig) -> u64 {
    debug_assert!(t >= 0.0);
    floor(t / config.tdc_cycle) as u64
}

/// Dark rate that makes the extra-count fraction equal `p_ad` when a
/// fraction `p_a` of periods already carries an afterpulse.
///
/// Dark counts can be registered between dead-time expiry after the pulse
/// and dead-time before the next pulse; the first of them competes with the
/// afterpulse.
pub fn dark_rate_for_extra_fraction(config: &DetectorConfig, p_a: f64, p_ad: f64) -> f64 {
    let window = (config.period_cycles - 2 * config.dead_time_cycles) as f64 * config.tdc_cycle;
    let p_dark = 1.0 - (1.0 - p_ad) / (1.0 - p_a);
    -log(1.0 - p_dark) / window
}

/// RNG for block `block` of a run.
pub fn block_rng(seed: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block);
    rng
}

/// Number of blocks covering `n_periods`.
pub fn block_count(n_periods: u64) -> u64 {
    n_periods.div_ceil(BLOCK_PERIODS)
}

/// Periods in block `block` of an `n_periods` run.
pub fn block_len(n_periods: u64, block: u64) -> u64 {
    let start = block * BLOCK_PERIODS;
    BLOCK_PERIODS.min(n_periods - start)
}

/// Simulates one block, appending its intervals to `out`.
pub fn simulate_block(
    config: &DetectorConfig,
    model: &TrapModel,
    seed: u64,
    block: u64,
    n_periods: u64,
    out: &mut Vec<u32>,
) -> Result<SimulationTally, SimError> {
    let mut rng = block_rng(seed, block);
    let mut tally = SimulationTally {
        n_periods,
        ..Default::default()
    };
    let jitter = config.period_jitter_cycles as i64;
    let dead = config.dead_time_cycles as f64;
    let trim = config.trim_bins as f64;
    let dark_per_cycle = model.dark_rate * config.tdc_cycle;

    for _ in 0..n_periods {
        let len = if jitter > 0 {
            let span = (2 * jitter + 1) as f64;
            config.period_cycles as i64 + (uniform01(&mut rng) * span) as i64 - jitter
        } else {
            config.period_cycles as i64
        } as u64;
        let rearm_limit = (len - config.dead_time_cycles as u64) as f64;

        // times in cycles from the pulse count
        let mut origin = 0.0;
        let mut last_stamp = 0u64;
        let mut first = true;
        loop {
            let afterpulse = sample_afterpulse_time(model, &mut rng)?
                .map(|t| origin + trim + t / config.tdc_cycle)
                .unwrap_or(f64::INFINITY);
            let dark = if dark_per_cycle > 0.0 {
                origin + dead + standard_exponential(&mut rng) / dark_per_cycle
            } else {
                f64::INFINITY
            };
            let (time, is_afterpulse) = if afterpulse <= dark {
                (afterpulse, true)
            } else {
                (dark, false)
            };
            if !(time < rearm_limit) {
                break;
            }
            let stamp = floor(time) as u64;
            out.push((stamp - last_stamp) as u32);
            last_stamp = stamp;
            if is_afterpulse {
                tally.n_afterpulse += 1;
            } else {
                tally.n_dark += 1;
            }
            if first {
                tally.n_periods_with_extra += 1;
                if is_afterpulse {
                    tally.n_periods_afterpulse_first += 1;
                }
                first = false;
            }
            if !model.cascade_enabled {
                break;
            }
            origin = time;
        }
        out.push((len - last_stamp) as u32);
    }
    Ok(tally)
}

/// Simulates `n_periods` laser periods and returns the interval stream
/// together with the ground-truth tally.
pub fn simulate_periods_tallied(
    config: &DetectorConfig,
    model: &TrapModel,
    n_periods: u64,
    seed: u64,
) -> Result<(IntervalStream, SimulationTally), SimError> {
    config.validate()?;
    model.validate()?;
    if n_periods == 0 {
        return Err(SimError::NoPeriods);
    }
    if matches!(model.variant, TrapVariant::PowerLaw { .. }) {
        return Err(SimError::NotGenerative);
    }
    let mut intervals = Vec::with_capacity(n_periods as usize + n_periods as usize / 64);
    let mut tally = SimulationTally::default();
    for block in 0..block_count(n_periods) {
        let t = simulate_block(
            config,
            model,
            seed,
            block,
            block_len(n_periods, block),
            &mut intervals,
        )?;
        tally.merge(&t);
    }
    let stream = IntervalStream {
        intervals,
        seed,
        config_snapshot: *config,
        truth: Some(model.clone()),
    };
    Ok((stream, tally))
}

pub fn simulate_periods(
    config: &DetectorConfig,
    model: &TrapModel,
    n_periods: u64,
    seed: u64,
) -> Result<IntervalStream, SimError> {
    simulate_periods_tallied(config, model, n_periods, seed).map(|(s, _)| s)
}
