//! Command-line pipeline from per-ion-impact displacement data to a
//! surface-stability verdict.
//!
//! Subcommands map one-to-one onto the pipeline stages and exchange the
//! documented interchange files (CFI/JSON impacts, moment CSV, fit JSON,
//! coefficient JSON, parameter JSON, dispersion CSV), so each stage can be
//! re-run in isolation. `pipeline` chains them end to end.
//!
//! Exit codes: 0 success, 1 data or validation error, 2 configuration
//! error, 3 numerical failure.

mod stages;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crater_moments::filter::FilterConfig;
use crater_moments::fit::FitOptions;
use crater_moments::stability::{KRange, LinearModel};

use stages::{CliError, CliResult};

#[derive(Parser)]
#[command(
    name = "crater-moments",
    version,
    about = "Crater-function moments, continuum coefficients, and linear stability for ion-irradiated binary targets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Generate a synthetic impact ensemble with known expected moments.
    Synth(SynthArgs),
    /// Parse and validate an impact file, reporting its contents.
    Validate(ValidateArgs),
    /// Filter noise and compute per-angle moment statistics.
    Moments(MomentsArgs),
    /// Fit each moment channel versus angle on the parity bases.
    Fit(FitArgs),
    /// Evaluate fits into height-equation coefficients at one angle.
    Coeffs(CoeffsArgs),
    /// Steady concentration and coupled-equation parameters.
    Bs(BsArgs),
    /// Dispersion relation and stability classification.
    Stability(StabilityCmdArgs),
    /// Integrate a single mode in time and measure its growth rate.
    Evolve(EvolveArgs),
    /// Plot-ready tables and a human-readable summary from artifacts.
    Report(ReportArgs),
    /// Run every stage from an entry point into one output directory.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Synthetic job (TOML/JSON path or builtin:synth-demo).
    #[arg(long)]
    job: String,
    /// Output impact file.
    #[arg(long, default_value = "impacts.cfi")]
    out: PathBuf,
    /// Also write the analytic expected moments as JSON.
    #[arg(long)]
    expected: Option<PathBuf>,
    /// Output encoding: cfi, json, or auto (by extension).
    #[arg(long)]
    format: Option<String>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Impact file (CFI or JSON).
    #[arg(long)]
    input: String,
    #[arg(long)]
    format: Option<String>,
}

#[derive(Args)]
struct MomentsArgs {
    #[arg(long)]
    input: String,
    #[arg(long)]
    format: Option<String>,
    #[arg(long, default_value = "moments.csv")]
    out: PathBuf,
    /// Inner annulus radius, fraction of min cell extent.
    #[arg(long)]
    annulus_inner: Option<f64>,
    /// Outer annulus radius, fraction of min cell extent.
    #[arg(long)]
    annulus_outer: Option<f64>,
    /// Skip the depth-linear shear correction.
    #[arg(long)]
    no_shear: bool,
    /// Override atomic volumes, e.g. Ga=0.0283,Sb=0.0283 (nm^3/atom).
    #[arg(long)]
    atomic_volumes: Option<String>,
}

#[derive(Args)]
struct FitArgs {
    /// Moment table CSV.
    #[arg(long)]
    moments: PathBuf,
    #[arg(long, default_value = "fits.json")]
    out: PathBuf,
    /// Basis terms per channel.
    #[arg(long)]
    n_terms: Option<usize>,
    /// Weight angles by 1/stderr².
    #[arg(long)]
    weighted: bool,
}

#[derive(Args)]
struct CoeffsArgs {
    /// Fit file (JSON).
    #[arg(long)]
    fits: PathBuf,
    #[arg(long, default_value = "coefficients.json")]
    out: PathBuf,
    /// Evaluation angle in degrees.
    #[arg(long, default_value_t = 0.0)]
    theta_deg: f64,
}

#[derive(Args)]
struct BsArgs {
    /// Coefficient set (JSON path or builtin:gasb-eq21).
    #[arg(long)]
    coeffs: String,
    #[arg(long, default_value = "bs_parameters.json")]
    out: PathBuf,
    /// Bulk concentrations, e.g. Ga=0.5,Sb=0.5 (default 50/50).
    #[arg(long)]
    bulk: Option<String>,
    /// Amorphous film thickness in nm.
    #[arg(long)]
    film_thickness: f64,
    /// Surface relaxation D in nm^4/s (required later for stability).
    #[arg(long)]
    d: Option<f64>,
    /// Fickian diffusion B' in nm^2/s (required later for stability).
    #[arg(long)]
    b_prime: Option<f64>,
    /// linear (default) or at-measured.
    #[arg(long)]
    concentration_eval: Option<String>,
}

#[derive(Args)]
struct StabilityCmdArgs {
    /// Parameter report (JSON) from the bs stage.
    #[arg(long)]
    bs: PathBuf,
    /// Ion flux in ions/nm²/s applied to per-flux parameters.
    #[arg(long, default_value_t = 1.0)]
    flux: f64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long)]
    k_min: Option<f64>,
    #[arg(long)]
    k_max: Option<f64>,
    #[arg(long)]
    k_samples: Option<usize>,
}

#[derive(Args)]
struct EvolveArgs {
    /// Parameter report (JSON) from the bs stage.
    #[arg(long, conflicts_with = "model")]
    bs: Option<PathBuf>,
    /// Direct model entry: JSON file with the eight absolute coefficients.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    flux: f64,
    /// Wavenumber in 1/nm.
    #[arg(long)]
    k: f64,
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, default_value = "evolve.json")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding pipeline artifacts.
    #[arg(long, default_value = ".")]
    dir: PathBuf,
    /// Where to write the report files (default <dir>/report).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

/// Flags mirror the config-file fields; explicit flags win.
#[derive(Args)]
struct PipelineArgs {
    /// TOML or JSON file with any of the pipeline fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Entry point: an impact file...
    #[arg(long)]
    input: Option<String>,
    /// ...or a synthetic job (path or builtin:synth-demo)...
    #[arg(long)]
    synth: Option<String>,
    /// ...or a coefficient set (path or builtin:gasb-eq21).
    #[arg(long)]
    coeffs: Option<String>,
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    annulus_inner: Option<f64>,
    #[arg(long)]
    annulus_outer: Option<f64>,
    #[arg(long)]
    no_shear: bool,
    /// Override atomic volumes, e.g. Ga=0.0283,Sb=0.0283 (nm^3/atom).
    #[arg(long)]
    atomic_volumes: Option<String>,
    #[arg(long)]
    n_terms: Option<usize>,
    #[arg(long)]
    weighted: bool,
    /// Bulk concentrations, e.g. Ga=0.5,Sb=0.5.
    #[arg(long)]
    bulk: Option<String>,
    /// Amorphous film thickness in nm.
    #[arg(long)]
    film_thickness: Option<f64>,
    #[arg(long)]
    flux: Option<f64>,
    /// Surface relaxation D in nm^4/s.
    #[arg(long)]
    d: Option<f64>,
    /// Fickian diffusion B' in nm^2/s.
    #[arg(long)]
    b_prime: Option<f64>,
    #[arg(long)]
    concentration_eval: Option<String>,
    #[arg(long)]
    k_min: Option<f64>,
    #[arg(long)]
    k_max: Option<f64>,
    #[arg(long)]
    k_samples: Option<usize>,
    /// Skip the report stage.
    #[arg(long)]
    no_report: bool,
}

/// Config-file form of the pipeline options.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PipelineConfig {
    input: Option<String>,
    synth: Option<String>,
    coeffs: Option<String>,
    format: Option<String>,
    out_dir: Option<PathBuf>,
    annulus_inner: Option<f64>,
    annulus_outer: Option<f64>,
    shear_correction: Option<bool>,
    atomic_volumes: Option<BTreeMap<String, f64>>,
    n_terms: Option<usize>,
    weighted: Option<bool>,
    bulk: Option<BTreeMap<String, f64>>,
    film_thickness_nm: Option<f64>,
    flux: Option<f64>,
    relaxation_d: Option<f64>,
    diffusion_b_prime: Option<f64>,
    concentration_eval: Option<String>,
    k_min: Option<f64>,
    k_max: Option<f64>,
    k_samples: Option<usize>,
    report: Option<bool>,
}

fn load_pipeline_config(path: &Path) -> CliResult<PipelineConfig> {
    let bytes = stages::read_path(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| CliError::config(format!("{}: not valid UTF-8", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }
}

fn filter_config(inner: Option<f64>, outer: Option<f64>, shear: bool) -> FilterConfig {
    let default = FilterConfig::default();
    FilterConfig {
        annulus_inner: inner.unwrap_or(default.annulus_inner),
        annulus_outer: outer.unwrap_or(default.annulus_outer),
        shear_correction: shear,
    }
}

fn k_range(k_min: Option<f64>, k_max: Option<f64>, k_samples: Option<usize>) -> KRange {
    let default = KRange::default();
    KRange {
        k_min: k_min.unwrap_or(default.k_min),
        k_max: k_max.unwrap_or(default.k_max),
        n_samples: k_samples.unwrap_or(default.n_samples),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(args) => {
            let job = stages::load_synth_job(&args.job)?;
            let set = stages::run_synth(
                &job,
                &args.out,
                args.expected.as_deref(),
                args.format.as_deref(),
            )?;
            println!(
                "synth: wrote {} ({} impacts over {} angles)",
                args.out.display(),
                set.impacts.len(),
                job.angles_deg.len()
            );
            Ok(())
        }
        Command::Validate(args) => {
            let set = stages::load_impacts(&args.input, args.format.as_deref())?;
            let angles = set.angles_deg();
            println!(
                "valid: {} impacts, {} angles ({:?} deg), species {} (omega {} nm^3) and {} (omega {} nm^3)",
                set.impacts.len(),
                angles.len(),
                angles,
                set.species[0].label,
                set.species[0].atomic_volume_nm3,
                set.species[1].label,
                set.species[1].atomic_volume_nm3,
            );
            Ok(())
        }
        Command::Moments(args) => {
            let mut set = stages::load_impacts(&args.input, args.format.as_deref())?;
            if let Some(text) = args.atomic_volumes.as_deref() {
                let volumes = stages::parse_label_map(text, "atomic volumes", "Ga=0.0283,Sb=0.0283")?;
                stages::apply_atomic_volumes(&mut set, &volumes)?;
            }
            let cfg = filter_config(args.annulus_inner, args.annulus_outer, !args.no_shear);
            let table = stages::run_moments(&set, &cfg, &args.out)?;
            println!(
                "moments: wrote {} ({} angles)",
                args.out.display(),
                table.samples.len()
            );
            Ok(())
        }
        Command::Fit(args) => {
            let table = stages::load_moment_table(&args.moments)?;
            let opts = FitOptions {
                n_terms: args.n_terms.unwrap_or(3),
                weighted: args.weighted,
            };
            let fits = stages::run_fit(&table, &opts, &args.out)?;
            println!("fit: wrote {} ({} channels)", args.out.display(), fits.fits.len());
            Ok(())
        }
        Command::Coeffs(args) => {
            let fits = stages::load_fits(&args.fits)?;
            let coeffs = stages::run_coeffs(&fits, args.theta_deg, &args.out)?;
            println!(
                "coeffs: wrote {} (theta = {} deg, v0 = {:.5} nm/s per I0)",
                args.out.display(),
                args.theta_deg,
                coeffs.recession_speed
            );
            Ok(())
        }
        Command::Bs(args) => {
            let coeffs = stages::load_coeffs(&args.coeffs)?;
            let bulk_map = args.bulk.as_deref().map(stages::parse_bulk_flag).transpose()?;
            let bulk = stages::resolve_bulk(&coeffs, bulk_map.as_ref())?;
            let eval = stages::parse_concentration_eval(args.concentration_eval.as_deref())?;
            let bs = stages::run_bs(
                &coeffs,
                bulk,
                args.film_thickness,
                args.d,
                args.b_prime,
                eval,
                &args.out,
            )?;
            stages::print_bs_summary(&bs);
            println!("bs: wrote {}", args.out.display());
            Ok(())
        }
        Command::Stability(args) => {
            let bs = stages::load_bs(&args.bs)?;
            let model = LinearModel::from_bs(&bs, args.flux)?;
            let range = k_range(args.k_min, args.k_max, args.k_samples);
            let artifacts = stages::run_stability(&model, &range, &args.out_dir)?;
            println!(
                "stability: wrote {} and {}",
                artifacts.dispersion_csv.display(),
                artifacts.report_json.display()
            );
            Ok(())
        }
        Command::Evolve(args) => {
            let model = match (&args.model, &args.bs) {
                (Some(path), _) => {
                    let text = String::from_utf8(stages::read_path(path)?)
                        .map_err(|_| CliError::data("model file: not valid UTF-8"))?;
                    let model: LinearModel = serde_json::from_str(&text)
                        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
                    model.validate()?;
                    model
                }
                (None, Some(path)) => {
                    let bs = stages::load_bs(path)?;
                    LinearModel::from_bs(&bs, args.flux)?
                }
                (None, None) => {
                    return Err(CliError::config("evolve needs --bs or --model".to_string()))
                }
            };
            stages::run_evolve(&model, args.k, args.t_final, args.dt, &args.out)?;
            Ok(())
        }
        Command::Report(args) => {
            let out_dir = args.out_dir.unwrap_or_else(|| args.dir.join("report"));
            stages::run_report(&args.dir, &out_dir)
        }
        Command::Pipeline(args) => run_pipeline(args),
    }
}

fn run_pipeline(args: PipelineArgs) -> CliResult<()> {
    let cfg = match &args.config {
        Some(path) => load_pipeline_config(path)?,
        None => PipelineConfig::default(),
    };
    let input = args.input.or(cfg.input);
    let synth = args.synth.or(cfg.synth);
    let coeffs_entry = args.coeffs.or(cfg.coeffs);
    let entries = [input.is_some(), synth.is_some(), coeffs_entry.is_some()]
        .iter()
        .filter(|b| **b)
        .count();
    if entries != 1 {
        return Err(CliError::config(
            "pipeline needs exactly one entry point: --input, --synth, or --coeffs",
        ));
    }
    let out_dir = args
        .out_dir
        .or(cfg.out_dir)
        .unwrap_or_else(|| PathBuf::from("crater-out"));
    let format = args.format.or(cfg.format);
    let shear = if args.no_shear {
        false
    } else {
        cfg.shear_correction.unwrap_or(true)
    };
    let filter = filter_config(
        args.annulus_inner.or(cfg.annulus_inner),
        args.annulus_outer.or(cfg.annulus_outer),
        shear,
    );
    let fit_opts = FitOptions {
        n_terms: args.n_terms.or(cfg.n_terms).unwrap_or(3),
        weighted: args.weighted || cfg.weighted.unwrap_or(false),
    };
    let bulk_map = match args.bulk.as_deref() {
        Some(text) => Some(stages::parse_bulk_flag(text)?),
        None => cfg.bulk,
    };
    let eval = stages::parse_concentration_eval(
        args.concentration_eval
            .as_deref()
            .or(cfg.concentration_eval.as_deref()),
    )?;
    let film_thickness = args.film_thickness.or(cfg.film_thickness_nm);
    let flux = args.flux.or(cfg.flux).unwrap_or(1.0);
    let relaxation_d = args.d.or(cfg.relaxation_d);
    let diffusion_b_prime = args.b_prime.or(cfg.diffusion_b_prime);
    let range = k_range(
        args.k_min.or(cfg.k_min),
        args.k_max.or(cfg.k_max),
        args.k_samples.or(cfg.k_samples),
    );
    let want_report = !args.no_report && cfg.report.unwrap_or(true);

    // ingest or synthesize, then walk the chain
    let coeffs = if let Some(entry) = coeffs_entry {
        let coeffs = stages::load_coeffs(&entry)?;
        stages::write_path(&out_dir.join("coefficients.json"), coeffs.to_json().as_bytes())?;
        println!("pipeline: coefficients from {entry}");
        coeffs
    } else {
        let set = if let Some(job_path) = synth {
            let job = stages::load_synth_job(&job_path)?;
            let out = out_dir.join("impacts.cfi");
            let set = stages::run_synth(
                &job,
                &out,
                Some(&out_dir.join("expected_moments.json")),
                None,
            )?;
            println!(
                "pipeline: wrote {} ({} impacts over {} angles)",
                out.display(),
                set.impacts.len(),
                job.angles_deg.len()
            );
            set
        } else {
            let path = input.unwrap();
            let set = stages::load_impacts(&path, format.as_deref())?;
            println!("pipeline: read {} ({} impacts)", path, set.impacts.len());
            set
        };
        let set = {
            let volumes = match args.atomic_volumes.as_deref() {
                Some(text) => Some(stages::parse_label_map(
                    text,
                    "atomic volumes",
                    "Ga=0.0283,Sb=0.0283",
                )?),
                None => cfg.atomic_volumes,
            };
            let mut set = set;
            if let Some(volumes) = &volumes {
                stages::apply_atomic_volumes(&mut set, volumes)?;
            }
            set
        };
        let table = stages::run_moments(&set, &filter, &out_dir.join("moments.csv"))?;
        println!(
            "pipeline: wrote {} ({} angles)",
            out_dir.join("moments.csv").display(),
            table.samples.len()
        );
        let fits = stages::run_fit(&table, &fit_opts, &out_dir.join("fits.json"))?;
        println!(
            "pipeline: wrote {} ({} channels)",
            out_dir.join("fits.json").display(),
            fits.fits.len()
        );
        let coeffs = stages::run_coeffs(&fits, 0.0, &out_dir.join("coefficients.json"))?;
        println!(
            "pipeline: wrote {} (theta = 0 deg)",
            out_dir.join("coefficients.json").display()
        );
        coeffs
    };

    let film_thickness = film_thickness.ok_or_else(|| {
        CliError::config("film_thickness_nm is required for the bs stage (e.g. --film-thickness 3)")
    })?;
    let bulk = stages::resolve_bulk(&coeffs, bulk_map.as_ref())?;
    let bs = stages::run_bs(
        &coeffs,
        bulk,
        film_thickness,
        relaxation_d,
        diffusion_b_prime,
        eval,
        &out_dir.join("bs_parameters.json"),
    )?;
    stages::print_bs_summary(&bs);

    let model = LinearModel::from_bs(&bs, flux)?;
    stages::run_stability(&model, &range, &out_dir)?;

    if want_report {
        stages::run_report(&out_dir, &out_dir.join("report"))?;
    }
    println!("pipeline: artifacts in {}", out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}
