//! Fit artifacts: what `aplab fit` writes and `aplab compare` reads.

use std::path::Path;

use aplab_core::fit::{FitError, FitProblem};
use aplab_core::stats::{gof_report, StatsError};
use aplab_core::{FitOutcome, GofReport, ModelFamily, ModelParams, ResponseHistogram, Weighting};
use serde::{Deserialize, Serialize};

use crate::parallel::multistart_fit;
use crate::{Error, SCHEMA_VERSION};

/// Identifies the data and settings a fit came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    /// FNV-1a hash of the histogram, hex.
    pub histogram_hash: String,
    pub family: ModelFamily,
    pub n_components: usize,
    pub seed: u64,
    pub n_starts: usize,
    pub weighting: Weighting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub schema_version: u32,
    pub fingerprint: Fingerprint,
    pub outcome: FitOutcome,
    pub histogram: ResponseHistogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofArtifact {
    pub schema_version: u32,
    pub fingerprint: Fingerprint,
    pub report: GofReport,
}

pub fn histogram_hash(h: &ResponseHistogram) -> String {
    format!("{:016x}", h.fingerprint())
}

/// Short name used for file names and table rows, e.g. `multi_exp_3`.
pub fn fit_label(family: ModelFamily, n_components: usize) -> String {
    match family {
        ModelFamily::MultiExp => format!("multi_exp_{n_components}"),
        f => f.as_str().to_string(),
    }
}

/// Multistart fit followed by the goodness-of-fit report.
pub fn fit_and_report(
    problem: &FitProblem,
    n_starts: usize,
    seed: u64,
) -> Result<(FitArtifact, GofArtifact), Error> {
    let outcome = multistart_fit(problem, n_starts, seed).map_err(|e| match e {
        FitError::AllStartsFailed { starts } => {
            let detail: Vec<String> = starts
                .iter()
                .map(|s| format!("start {}: {:?} after {} iterations, sse {:.6e}", s.index, s.failure, s.n_iterations, s.sse))
                .collect();
            Error::Fit(format!("all {} starts failed\n  {}", starts.len(), detail.join("\n  ")))
        }
        other => Error::BadInput(other.to_string()),
    })?;
    let report = gof_report(&problem.histogram, &outcome.params, problem.n_free()).map_err(|e| match e {
        StatsError::InconsistentFit(_) => Error::Fit(e.to_string()),
        _ => Error::BadInput(e.to_string()),
    })?;
    let fingerprint = Fingerprint {
        histogram_hash: histogram_hash(&problem.histogram),
        family: problem.family,
        n_components: problem.n_components,
        seed,
        n_starts,
        weighting: problem.weighting,
    };
    let fit = FitArtifact {
        schema_version: SCHEMA_VERSION,
        fingerprint: fingerprint.clone(),
        outcome,
        histogram: problem.histogram.clone(),
    };
    let gof = GofArtifact { schema_version: SCHEMA_VERSION, fingerprint, report };
    Ok((fit, gof))
}

/// Residuals and ±2σ bounds per bin.
pub fn write_residual_csv(path: &Path, histogram: &ResponseHistogram, report: &GofReport) -> Result<(), Error> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["bin_center_us", "residual", "minus2sigma", "plus2sigma"])
        .map_err(|e| Error::csv(path, e))?;
    for (i, (r, s)) in report.residuals.iter().zip(&report.sigma_bounds).enumerate() {
        w.write_record([
            histogram.bin_center(i).to_string(),
            r.to_string(),
            (-s).to_string(),
            s.to_string(),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub const TABLE_HEADER: &str = "model          | lifetimes, ns                                  | chi2/chi2_crit | 1-R^2      | P_a, %  | failures";

/// One table row: lifetimes, χ²/χ²_crit, 1 − R² and P_a.
pub fn table_row(fit: &FitArtifact, gof: &GofArtifact) -> String {
    let lifetimes = match &fit.outcome.params {
        ModelParams::MultiExp(me) => me
            .components
            .iter()
            .map(|c| format!("{:.1}", c.tau * 1e3))
            .collect::<Vec<_>>()
            .join(", "),
        ModelParams::Sinhc(s) => format!("{:.2} .. {:.0}", s.tau_min() * 1e3, s.tau_max() * 1e3),
        ModelParams::PowerLaw(p) => format!("(alpha = {:.3}, D = {:.4})", p.alpha, p.d),
    };
    let r = &gof.report;
    format!(
        "{:<14} | {:<46} | {:>14.3} | {:>10.3e} | {:>7.4} | {}/{}",
        fit_label(fit.fingerprint.family, fit.fingerprint.n_components),
        lifetimes,
        r.chi2_normalized,
        r.one_minus_r2,
        r.p_a * 100.0,
        fit.outcome.failures,
        fit.fingerprint.n_starts,
    )
}
