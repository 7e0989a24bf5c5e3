//! `aplab` command line.
//!
//! ```text
//! aplab simulate --model trap.json --periods 20000000 --seed 1 --out run/
//! aplab extract  --input run/intervals.bin --out run/
//! aplab fit      --input run/histogram.json --family sinhc --seed 1 --out run/
//! aplab fit      --input run/histogram.json --family multi_exp --components 5 --sweep --seed 1 --out run/
//! aplab compare  run/fit_sinhc.json run/fit_power_law.json --out run/cmp
//! ```
//!
//! Exit status is 0 on success, 2 for bad input, 3 when a fit fails and 4 on
//! I/O errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use aplab_core::extract::histogram_from_intervals;
use aplab_core::stats::gof_report;
use aplab_core::{DetectorConfig, FitProblem, ModelFamily, ResponseHistogram, Weighting};
use clap::{Parser, Subcommand, ValueEnum};

use crate::artifacts::{fit_and_report, fit_label, table_row, write_residual_csv, FitArtifact, GofArtifact, TABLE_HEADER};
use crate::formats::{
    looks_like_intervals, read_config, read_histogram, read_intervals, read_json, read_model, write_histogram_csv,
    write_histogram_json, write_intervals, write_json, IntervalFormat,
};
use crate::manifest::RunManifest;
use crate::{parallel, Error};

#[derive(Debug, Parser)]
#[command(name = "aplab", version, about = "Afterpulse simulation, extraction and model fitting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    MultiExp,
    Sinhc,
    PowerLaw,
}

impl From<FamilyArg> for ModelFamily {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::MultiExp => ModelFamily::MultiExp,
            FamilyArg::Sinhc => ModelFamily::Sinhc,
            FamilyArg::PowerLaw => ModelFamily::PowerLaw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightingArg {
    Uniform,
    Poisson,
}

impl From<WeightingArg> for Weighting {
    fn from(w: WeightingArg) -> Self {
        match w {
            WeightingArg::Uniform => Weighting::Uniform,
            WeightingArg::Poisson => Weighting::Poisson,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a detector and write its interval stream.
    Simulate {
        /// Detector configuration JSON; built-in defaults if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Trap model JSON.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        periods: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = IntervalFormat::Binary)]
        format: IntervalFormat,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the response histogram from an interval file.
    Extract {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model family to a histogram or an interval file.
    Fit {
        /// Histogram JSON, or an interval file (binary or CSV).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        family: FamilyArg,
        /// Number of exponentials; with --sweep, the largest of 1..=N.
        #[arg(long)]
        components: Option<usize>,
        /// Fit every multi-exp order from 1 to --components (default 5).
        #[arg(long)]
        sweep: bool,
        #[arg(long, default_value_t = 10)]
        starts: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = WeightingArg::Uniform)]
        weighting: WeightingArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare fits of the same histogram and export plot data.
    Compare {
        /// Fit artifacts written by `aplab fit`.
        #[arg(required = true)]
        fits: Vec<PathBuf>,
        /// Keep one bin in every `stride`.
        #[arg(long, default_value_t = 120)]
        stride: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` (program name first), runs the command and returns the exit
/// status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let argv: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli.command, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn create_dir(out: &Path) -> Result<(), Error> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn load_config(path: Option<&Path>) -> Result<DetectorConfig, Error> {
    path.map_or_else(|| Ok(DetectorConfig::default()), read_config)
}

fn path_string(p: &Path) -> String {
    p.display().to_string()
}

pub fn execute(command: Command, argv: Vec<String>) -> Result<(), Error> {
    match command {
        Command::Simulate { config, model, periods, seed, format, out } => {
            let cfg = load_config(config.as_deref())?;
            let trap = read_model(&model)?;
            if periods == 0 {
                return Err(Error::BadInput("--periods must be at least 1".into()));
            }
            let (stream, tally) =
                parallel::simulate(&cfg, &trap, periods, seed).map_err(|e| Error::BadInput(e.to_string()))?;
            create_dir(&out)?;
            let name = match format {
                IntervalFormat::Binary => "intervals.bin",
                IntervalFormat::Csv => "intervals.csv",
            };
            write_intervals(&out.join(name), &stream, format)?;
            write_json(&out.join("tally.json"), &tally)?;
            println!("periods {}  intervals {}  P_ad {:.6}", tally.n_periods, stream.intervals.len(), tally.p_ad());
            let mut m = RunManifest::new("simulate", argv, &out);
            m.config_paths = config.iter().chain([&model]).map(|p| path_string(p)).collect();
            m.seed = Some(seed);
            m.outputs = vec![name.into(), "tally.json".into()];
            m.write(&out)
        }
        Command::Extract { input, config, out } => {
            let cfg = load_config(config.as_deref())?;
            let hist = histogram_from_file(&input, &cfg)?;
            create_dir(&out)?;
            write_histogram_json(&out.join("histogram.json"), &hist)?;
            write_histogram_csv(&out.join("histogram.csv"), &hist)?;
            println!(
                "periods {}  extras {}  kept {}  bins {}  P_ad {:.6}",
                hist.n_periods,
                hist.n_total + hist.n_excluded,
                hist.n_total,
                hist.n_bins(),
                hist.p_ad_hat
            );
            let mut m = RunManifest::new("extract", argv, &out);
            m.config_paths = config.iter().chain([&input]).map(|p| path_string(p)).collect();
            m.outputs = vec!["histogram.json".into(), "histogram.csv".into()];
            m.write(&out)
        }
        Command::Fit { input, config, family, components, sweep, starts, seed, weighting, out } => {
            let family = ModelFamily::from(family);
            if sweep && family != ModelFamily::MultiExp {
                return Err(Error::BadInput("--sweep applies to --family multi-exp only".into()));
            }
            let max_n = components.unwrap_or(if sweep { 5 } else { 1 });
            if family == ModelFamily::MultiExp && max_n == 0 {
                return Err(Error::BadInput("--components must be at least 1".into()));
            }
            let cfg = load_config(config.as_deref())?;
            let hist = if looks_like_intervals(&input)? {
                histogram_from_file(&input, &cfg)?
            } else {
                read_histogram(&input)?
            };
            let orders: Vec<usize> = match family {
                ModelFamily::MultiExp if sweep => (1..=max_n).collect(),
                ModelFamily::MultiExp => vec![max_n],
                _ => vec![0],
            };
            create_dir(&out)?;
            let mut outputs = Vec::new();
            let mut first_err = None;
            println!("{TABLE_HEADER}");
            for n in orders {
                let problem = FitProblem::new(hist.clone(), family, n)
                    .map_err(|e| Error::BadInput(e.to_string()))?
                    .with_weighting(weighting.into());
                let label = fit_label(family, n);
                match fit_and_report(&problem, starts, seed) {
                    Ok((fit, gof)) => {
                        println!("{}", table_row(&fit, &gof));
                        let names = [format!("fit_{label}.json"), format!("gof_{label}.json"), format!("residuals_{label}.csv")];
                        write_json(&out.join(&names[0]), &fit)?;
                        write_json(&out.join(&names[1]), &gof)?;
                        write_residual_csv(&out.join(&names[2]), &fit.histogram, &gof.report)?;
                        outputs.extend(names);
                    }
                    Err(e) => {
                        eprintln!("{label}: {e}");
                        first_err.get_or_insert(e);
                    }
                }
            }
            let mut m = RunManifest::new("fit", argv, &out);
            m.config_paths = config.iter().chain([&input]).map(|p| path_string(p)).collect();
            m.seed = Some(seed);
            m.outputs = outputs;
            m.write(&out)?;
            first_err.map_or(Ok(()), Err)
        }
        Command::Compare { fits, stride, out } => {
            if fits.len() < 2 {
                return Err(Error::BadInput("compare needs at least two fit artifacts".into()));
            }
            if stride == 0 {
                return Err(Error::BadInput("--stride must be at least 1".into()));
            }
            let artifacts: Vec<FitArtifact> = fits.iter().map(|p| read_json(p)).collect::<Result<_, _>>()?;
            let hash = &artifacts[0].fingerprint.histogram_hash;
            for (a, p) in artifacts.iter().zip(&fits) {
                if &a.fingerprint.histogram_hash != hash {
                    return Err(Error::BadInput(format!(
                        "{} was fitted to histogram {}, not {hash}",
                        p.display(),
                        a.fingerprint.histogram_hash
                    )));
                }
            }
            create_dir(&out)?;
            let outputs = compare(&artifacts, stride, &out)?;
            let mut m = RunManifest::new("compare", argv, &out);
            m.config_paths = fits.iter().map(|p| path_string(p)).collect();
            m.outputs = outputs;
            m.write(&out)
        }
    }
}

fn histogram_from_file(input: &Path, cfg: &DetectorConfig) -> Result<ResponseHistogram, Error> {
    let file = read_intervals(input)?;
    file.check_config(cfg)?;
    histogram_from_intervals(&file.intervals, cfg).map_err(|e| Error::BadInput(format!("{}: {e}", input.display())))
}

/// Labels made unique by suffixing repeats with their position.
fn unique_labels(artifacts: &[FitArtifact]) -> Vec<String> {
    let base: Vec<String> =
        artifacts.iter().map(|a| fit_label(a.fingerprint.family, a.fingerprint.n_components)).collect();
    base.iter()
        .enumerate()
        .map(|(i, l)| if base.iter().filter(|b| *b == l).count() > 1 { format!("{l}_{i}") } else { l.clone() })
        .collect()
}

fn compare(artifacts: &[FitArtifact], stride: usize, out: &Path) -> Result<Vec<String>, Error> {
    let hist = &artifacts[0].histogram;
    let labels = unique_labels(artifacts);
    let reports: Vec<GofArtifact> = artifacts
        .iter()
        .map(|a| {
            let n_free = a.outcome.free.len();
            gof_report(&a.histogram, &a.outcome.params, n_free)
                .map(|report| GofArtifact { schema_version: crate::SCHEMA_VERSION, fingerprint: a.fingerprint.clone(), report })
                .map_err(|e| Error::BadInput(e.to_string()))
        })
        .collect::<Result<_, _>>()?;
    let bins: Vec<usize> = (0..hist.n_bins()).step_by(stride).collect();
    let norm = hist.n_total as f64 * hist.bin_width;
    let mut outputs = Vec::new();

    let path = out.join("points.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
    w.write_record(["bin_center_us", "density"]).map_err(|e| Error::csv(&path, e))?;
    for &i in &bins {
        w.write_record([hist.bin_center(i).to_string(), (hist.counts[i] as f64 / norm).to_string()])
            .map_err(|e| Error::csv(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    outputs.push("points.csv".to_string());

    let path = out.join("curves.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
    let mut header = vec!["bin_center_us".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header).map_err(|e| Error::csv(&path, e))?;
    for &i in &bins {
        let t = hist.bin_center(i);
        let mut row = vec![t.to_string()];
        row.extend(artifacts.iter().map(|a| a.outcome.params.pdf(t).to_string()));
        w.write_record(&row).map_err(|e| Error::csv(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    outputs.push("curves.csv".to_string());

    for (label, g) in labels.iter().zip(&reports) {
        let name = format!("residuals_{label}.csv");
        let path = out.join(&name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
        w.write_record(["bin_center_us", "residual", "minus2sigma", "plus2sigma"])
            .map_err(|e| Error::csv(&path, e))?;
        for &i in &bins {
            let s = g.report.sigma_bounds[i];
            w.write_record([
                hist.bin_center(i).to_string(),
                g.report.residuals[i].to_string(),
                (-s).to_string(),
                s.to_string(),
            ])
            .map_err(|e| Error::csv(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        outputs.push(name);
    }

    let mut table = String::from(TABLE_HEADER);
    table.push('\n');
    for (a, g) in artifacts.iter().zip(&reports) {
        table.push_str(&table_row(a, g));
        table.push('\n');
    }
    print!("{table}");
    let path = out.join("table.txt");
    fs::write(&path, &table).map_err(|e| Error::io(&path, e))?;
    outputs.push("table.txt".to_string());
    Ok(outputs)
}
