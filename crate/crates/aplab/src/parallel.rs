//! Multi-threaded drivers. Every function here returns exactly what its
//! serial counterpart in `aplab_core` returns, whatever the thread count.

use aplab_core::extract::{histogram_from_intervals, merge_histograms, ExtractError};
use aplab_core::fit::{run_start, select_best, FitError};
use aplab_core::sim::{block_count, block_len, simulate_block, SimError, SimulationTally, TrapVariant};
use aplab_core::{DetectorConfig, FitOutcome, FitProblem, IntervalStream, ResponseHistogram, TrapModel};
use rayon::prelude::*;

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "APLAB_THREADS";

/// Worker count from `APLAB_THREADS`, or rayon's default when unset or
/// unparsable.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

/// Runs `f` on a pool sized by [`thread_count`].
pub fn install<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(thread_count()).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

fn check_model(config: &DetectorConfig, model: &TrapModel, n_periods: u64) -> Result<(), SimError> {
    config.validate()?;
    model.validate()?;
    if n_periods == 0 {
        return Err(SimError::NoPeriods);
    }
    if matches!(model.variant, TrapVariant::PowerLaw { .. }) {
        return Err(SimError::NotGenerative);
    }
    Ok(())
}

/// Block-parallel [`aplab_core::sim::simulate_periods_tallied`].
pub fn simulate(
    config: &DetectorConfig,
    model: &TrapModel,
    n_periods: u64,
    seed: u64,
) -> Result<(IntervalStream, SimulationTally), SimError> {
    check_model(config, model, n_periods)?;
    let blocks: Vec<(Vec<u32>, SimulationTally)> = install(|| {
        (0..block_count(n_periods))
            .into_par_iter()
            .map(|b| {
                let mut out = Vec::new();
                simulate_block(config, model, seed, b, block_len(n_periods, b), &mut out).map(|t| (out, t))
            })
            .collect::<Result<_, _>>()
    })?;
    let mut intervals = Vec::with_capacity(blocks.iter().map(|(v, _)| v.len()).sum());
    let mut tally = SimulationTally::default();
    for (v, t) in &blocks {
        intervals.extend_from_slice(v);
        tally.merge(t);
    }
    let stream = IntervalStream { intervals, seed, config_snapshot: *config, truth: Some(model.clone()) };
    Ok((stream, tally))
}

#[derive(Debug, thiserror::Error)]
pub enum SimHistogramError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
}

/// Simulates straight into a histogram without keeping the stream. Each
/// block ends on a period boundary, so per-block histograms merge to the
/// histogram of the whole stream.
pub fn simulate_histogram(
    config: &DetectorConfig,
    model: &TrapModel,
    n_periods: u64,
    seed: u64,
) -> Result<(ResponseHistogram, SimulationTally), SimHistogramError> {
    check_model(config, model, n_periods)?;
    let parts: Vec<(Option<ResponseHistogram>, SimulationTally, u64)> = install(|| {
        (0..block_count(n_periods))
            .into_par_iter()
            .map(|b| -> Result<_, SimHistogramError> {
                let len = block_len(n_periods, b);
                let mut out = Vec::new();
                let tally = simulate_block(config, model, seed, b, len, &mut out)?;
                match histogram_from_intervals(&out, config) {
                    Ok(h) => Ok((Some(h), tally, len)),
                    // a block without extra counts still contributes its periods
                    Err(ExtractError::EmptyHistogram) => Ok((None, tally, len)),
                    Err(e) => Err(e.into()),
                }
            })
            .collect::<Result<_, _>>()
    })?;
    let mut hist = ResponseHistogram::empty(config);
    let mut tally = SimulationTally::default();
    let mut bare_periods = 0;
    for (h, t, len) in &parts {
        tally.merge(t);
        match h {
            Some(h) => hist = merge_histograms(&hist, h)?,
            None => bare_periods += len,
        }
    }
    if hist.n_total == 0 {
        return Err(ExtractError::EmptyHistogram.into());
    }
    if bare_periods > 0 {
        let empty = ResponseHistogram { n_periods: bare_periods, ..ResponseHistogram::empty(config) };
        hist = merge_histograms(&hist, &empty)?;
    }
    Ok((hist, tally))
}

/// [`aplab_core::fit::multistart_fit`] with the starts spread over threads.
pub fn multistart_fit(problem: &FitProblem, n_starts: usize, seed: u64) -> Result<FitOutcome, FitError> {
    let n_starts = n_starts.max(1);
    let results = install(|| (0..n_starts).into_par_iter().map(|k| run_start(problem, seed, k)).collect());
    select_best(results)
}
