//! Stage implementations behind the subcommands. Every stage reads its
//! documented interchange file and writes the next one, so any stage can be
//! re-run from persisted artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crater_moments::cfi::{parse_impact_set, write_impact_set, CfiError, Format};
use crater_moments::coefficients::{
    map_to_bs_parameters, steady_concentration, BsParameters, CoeffError, CoefficientSet,
    ConcentrationEval,
};
use crater_moments::filter::{FilterConfig, FilterError};
use crater_moments::fit::{fit_moment_curves, FitError, FitOptions, MomentFits};
use crater_moments::impact::ImpactSet;
use crater_moments::moments::{
    aggregate_moments, parse_moment_csv, write_moment_csv, MomentTable,
};
use crater_moments::stability::{
    classify_stability, dispersion_sigma_plus, evolve_mode, sample_dispersion,
    write_dispersion_csv, KRange, LinearModel, StabilityError, StabilityReport,
};
use crater_moments::synthetic::{generate_synthetic_impacts, SyntheticCraterSpec, SyntheticError};
use crater_moments::compute_height_coefficients;

/// Exit codes: 1 data/validation, 2 configuration, 3 numerical failure.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }
    pub fn numeric(message: impl Into<String>) -> Self {
        CliError {
            code: 3,
            message: message.into(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl From<CfiError> for CliError {
    fn from(e: CfiError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<FilterError> for CliError {
    fn from(e: FilterError) -> Self {
        match e {
            FilterError::BadConfig { .. } => CliError::config(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<SyntheticError> for CliError {
    fn from(e: SyntheticError) -> Self {
        CliError::config(e.to_string())
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::BadOptions { .. } => CliError::config(e.to_string()),
            FitError::RankDeficient { .. } => CliError::numeric(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<CoeffError> for CliError {
    fn from(e: CoeffError) -> Self {
        match e {
            CoeffError::BadFractions { .. }
            | CoeffError::BadFilmThickness { .. }
            | CoeffError::BadUserParameter { .. }
            | CoeffError::ThetaNotZero { .. } => CliError::config(e.to_string()),
            CoeffError::APrimeNotPositive { .. } => CliError::numeric(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<StabilityError> for CliError {
    fn from(e: StabilityError) -> Self {
        match e {
            StabilityError::MissingParameter { .. }
            | StabilityError::BadModel { .. }
            | StabilityError::BadKRange { .. }
            | StabilityError::BadEvolveArgs { .. }
            | StabilityError::TimestepTooLarge { .. } => CliError::config(e.to_string()),
            StabilityError::BandTruncated { .. } | StabilityError::IndeterminateRate { .. } => {
                CliError::numeric(e.to_string())
            }
        }
    }
}

pub fn read_path(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))
}

pub fn write_path(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::data(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    fs::write(path, bytes)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

/// Fixtures compiled into the binary, addressable as `builtin:<name>`.
const GASB_EQ21_JSON: &str = include_str!("../fixtures/gasb_eq21_coefficients.json");
const SYNTH_DEMO_TOML: &str = include_str!("../fixtures/synth_demo.toml");

pub fn read_source(spec: &str) -> CliResult<Vec<u8>> {
    match spec {
        "builtin:gasb-eq21" => Ok(GASB_EQ21_JSON.as_bytes().to_vec()),
        "builtin:synth-demo" => Ok(SYNTH_DEMO_TOML.as_bytes().to_vec()),
        other if other.starts_with("builtin:") => Err(CliError::config(format!(
            "unknown builtin {other}; available: builtin:gasb-eq21, builtin:synth-demo"
        ))),
        path => read_path(Path::new(path)),
    }
}

/// Pick the encoding from an explicit flag or the file extension.
pub fn impact_format(path: &str, flag: Option<&str>) -> CliResult<Format> {
    match flag {
        Some("cfi") => Ok(Format::CfiText),
        Some("json") => Ok(Format::Json),
        Some("auto") | None => {
            if path.ends_with(".json") {
                Ok(Format::Json)
            } else {
                Ok(Format::CfiText)
            }
        }
        Some(other) => Err(CliError::config(format!(
            "unknown format {other}; use cfi, json, or auto"
        ))),
    }
}

pub fn load_impacts(path: &str, format: Option<&str>) -> CliResult<ImpactSet> {
    let bytes = read_source(path)?;
    let fmt = impact_format(path, format)?;
    Ok(parse_impact_set(&bytes, fmt)?)
}

/// A synthetic-generation job: the crater recipe plus sampling plan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthJob {
    pub spec: SyntheticCraterSpec,
    pub angles_deg: Vec<f64>,
    pub impacts_per_angle: usize,
}

pub fn load_synth_job(source: &str) -> CliResult<SynthJob> {
    let bytes = read_source(source)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| CliError::data(format!("{source}: not valid UTF-8")))?;
    if source.ends_with(".json") {
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{source}: {e}")))
    } else {
        toml::from_str(&text).map_err(|e| CliError::config(format!("{source}: {e}")))
    }
}

pub fn run_synth(
    job: &SynthJob,
    out: &Path,
    expected_out: Option<&Path>,
    format: Option<&str>,
) -> CliResult<ImpactSet> {
    let (set, expected) =
        generate_synthetic_impacts(&job.spec, &job.angles_deg, job.impacts_per_angle)?;
    let fmt = impact_format(&out.to_string_lossy(), format)?;
    write_path(out, &write_impact_set(&set, fmt)?)?;
    if let Some(path) = expected_out {
        let mut text = serde_json::to_string_pretty(&expected)
            .map_err(|e| CliError::data(e.to_string()))?;
        text.push('\n');
        write_path(path, text.as_bytes())?;
    }
    Ok(set)
}

pub fn run_moments(set: &ImpactSet, cfg: &FilterConfig, out: &Path) -> CliResult<MomentTable> {
    let table = aggregate_moments(set, cfg)?;
    write_path(out, write_moment_csv(&table).as_bytes())?;
    Ok(table)
}

pub fn load_moment_table(path: &Path) -> CliResult<MomentTable> {
    let bytes = read_path(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| CliError::data(format!("{}: not valid UTF-8", path.display())))?;
    parse_moment_csv(&text).map_err(|e| CliError::data(e.to_string()))
}

pub fn run_fit(table: &MomentTable, opts: &FitOptions, out: &Path) -> CliResult<MomentFits> {
    let fits = fit_moment_curves(table, opts)?;
    write_path(out, fits.to_json().as_bytes())?;
    Ok(fits)
}

pub fn load_fits(path: &Path) -> CliResult<MomentFits> {
    let bytes = read_path(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| CliError::data(format!("{}: not valid UTF-8", path.display())))?;
    MomentFits::from_json(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn run_coeffs(fits: &MomentFits, theta_deg: f64, out: &Path) -> CliResult<CoefficientSet> {
    let coeffs = compute_height_coefficients(fits, theta_deg.to_radians())?;
    write_path(out, coeffs.to_json().as_bytes())?;
    Ok(coeffs)
}

pub fn load_coeffs(source: &str) -> CliResult<CoefficientSet> {
    let bytes = read_source(source)?;
    let text =
        String::from_utf8(bytes).map_err(|_| CliError::data(format!("{source}: not valid UTF-8")))?;
    CoefficientSet::from_json(&text).map_err(|e| CliError::data(format!("{source}: {e}")))
}

/// Resolve "Label=fraction,Label=fraction" against the coefficient set's
/// species order; None means 50/50.
pub fn resolve_bulk(
    coeffs: &CoefficientSet,
    bulk: Option<&BTreeMap<String, f64>>,
) -> CliResult<[f64; 2]> {
    match bulk {
        None => Ok([0.5, 0.5]),
        Some(map) => {
            let mut out = [0.0; 2];
            for (i, sp) in coeffs.species.iter().enumerate() {
                out[i] = *map.get(&sp.label).ok_or_else(|| {
                    CliError::config(format!(
                        "bulk concentration for species {} not given",
                        sp.label
                    ))
                })?;
            }
            if map.len() != 2 {
                return Err(CliError::config(format!(
                    "bulk concentrations name {} species, expected exactly the pair {:?}",
                    map.len(),
                    [&coeffs.species[0].label, &coeffs.species[1].label]
                )));
            }
            Ok(out)
        }
    }
}

pub fn parse_bulk_flag(text: &str) -> CliResult<BTreeMap<String, f64>> {
    parse_label_map(text, "bulk", "Ga=0.5,Sb=0.5")
}

pub fn parse_label_map(
    text: &str,
    what: &str,
    example: &str,
) -> CliResult<BTreeMap<String, f64>> {
    let mut map = BTreeMap::new();
    for part in text.split(',') {
        let (label, value) = part.split_once('=').ok_or_else(|| {
            CliError::config(format!("{what} must look like {example}, found {part:?}"))
        })?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| CliError::config(format!("cannot parse {what} value {value:?}")))?;
        map.insert(label.trim().to_string(), value);
    }
    Ok(map)
}

/// Override the dataset's atomic volumes by species label.
pub fn apply_atomic_volumes(
    set: &mut ImpactSet,
    volumes: &BTreeMap<String, f64>,
) -> CliResult<()> {
    for (label, omega) in volumes {
        match set.species.iter_mut().find(|s| &s.label == label) {
            Some(sp) => sp.atomic_volume_nm3 = *omega,
            None => {
                return Err(CliError::config(format!(
                    "atomic volume given for unknown species {label}"
                )))
            }
        }
    }
    set.validate().map_err(|e| CliError::config(e.to_string()))
}

pub fn parse_concentration_eval(text: Option<&str>) -> CliResult<ConcentrationEval> {
    match text {
        None | Some("linear") => Ok(ConcentrationEval::Linear),
        Some("at-measured") | Some("at_measured") => Ok(ConcentrationEval::AtMeasured),
        Some(other) => Err(CliError::config(format!(
            "unknown concentration evaluation {other}; use linear or at-measured"
        ))),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn run_bs(
    coeffs: &CoefficientSet,
    bulk: [f64; 2],
    film_thickness_nm: f64,
    relaxation_d: Option<f64>,
    diffusion_b_prime: Option<f64>,
    eval: ConcentrationEval,
    out: &Path,
) -> CliResult<BsParameters> {
    let conc = steady_concentration(coeffs, bulk, film_thickness_nm)?;
    let bs = map_to_bs_parameters(coeffs, &conc, relaxation_d, diffusion_b_prime, eval)?;
    write_path(out, bs.to_json().as_bytes())?;
    Ok(bs)
}

pub fn load_bs(path: &Path) -> CliResult<BsParameters> {
    let bytes = read_path(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| CliError::data(format!("{}: not valid UTF-8", path.display())))?;
    BsParameters::from_json(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn print_bs_summary(bs: &BsParameters) {
    let [a, b] = &bs.species;
    println!(
        "bs: species {a}/{b}, steady concentration {:.4}/{:.4} (bulk {:.2}/{:.2}, film {} nm)",
        bs.concentration.steady[0],
        bs.concentration.steady[1],
        bs.concentration.bulk[0],
        bs.concentration.bulk[1],
        bs.concentration.film_thickness_nm
    );
    println!("bs: A  = {:.4} nm/s per I0", bs.a);
    println!("bs: C  = {:.4} nm^2/s per I0", bs.c);
    println!("bs: A' = {:.5} 1/s per I0", bs.a_prime);
    println!("bs: C' = {:.4} nm/s per I0", bs.c_prime);
    let g = bs.longwave_group();
    println!(
        "bs: G = A'C - C'A = {:.5} nm^2/s^2 per I0^2 ({})",
        g,
        if g > 0.0 {
            "positive: long waves stable"
        } else {
            "negative: long waves unstable"
        }
    );
}

pub struct StabilityArtifacts {
    pub dispersion_csv: PathBuf,
    pub report_json: PathBuf,
}

pub fn run_stability(
    model: &LinearModel,
    range: &KRange,
    out_dir: &Path,
) -> CliResult<StabilityArtifacts> {
    let samples = sample_dispersion(model, range);
    let report = classify_stability(model, range)?;
    let dispersion_csv = out_dir.join("dispersion.csv");
    write_path(&dispersion_csv, write_dispersion_csv(&samples).as_bytes())?;
    let report_json = out_dir.join("stability.json");
    write_path(&report_json, report.to_json().as_bytes())?;
    println!("stability: classification = {}", report.classification);
    if let Some([lo, hi]) = report.band {
        println!("stability: unstable band k = [{lo:.6}, {hi:.6}] 1/nm");
    }
    if let Some(fastest) = report.fastest {
        println!(
            "stability: fastest mode k* = {:.6} 1/nm, sigma+ = {:.6e} 1/s",
            fastest.k, fastest.sigma
        );
    }
    Ok(StabilityArtifacts {
        dispersion_csv,
        report_json,
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvolveOutput {
    pub k: f64,
    pub t_final: f64,
    pub dt: f64,
    pub growth_rate: f64,
    pub frequency: Option<f64>,
    pub residual_rms: f64,
    pub n_steps: usize,
    pub predicted_sigma_real: f64,
    pub predicted_sigma_imag: f64,
}

pub fn run_evolve(
    model: &LinearModel,
    k: f64,
    t_final: Option<f64>,
    dt: Option<f64>,
    out: &Path,
) -> CliResult<EvolveOutput> {
    let bound = model
        .evolution_matrix(k)
        .iter()
        .flatten()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(1e-12);
    let dt = dt.unwrap_or(0.02 / bound);
    let t_final = t_final.unwrap_or(200.0 / bound);
    let result = evolve_mode(model, k, t_final, dt)?;
    let predicted = dispersion_sigma_plus(model, k);
    let output = EvolveOutput {
        k,
        t_final,
        dt,
        growth_rate: result.growth_rate,
        frequency: result.frequency,
        residual_rms: result.residual_rms,
        n_steps: result.n_steps,
        predicted_sigma_real: predicted.sigma_real,
        predicted_sigma_imag: predicted.sigma_imag,
    };
    let mut text = serde_json::to_string_pretty(&output).map_err(|e| CliError::data(e.to_string()))?;
    text.push('\n');
    write_path(out, text.as_bytes())?;
    println!(
        "evolve: k = {k} 1/nm, measured rate = {:.6e} 1/s (dispersion predicts {:.6e})",
        output.growth_rate, output.predicted_sigma_real
    );
    Ok(output)
}

/// Plot-ready tables plus a human-readable summary from whatever artifacts
/// the directory holds. The dispersion table is mandatory and must be
/// non-empty; the moment and coefficient tables fall back to header-only
/// files when the pipeline entered downstream of them.
pub fn run_report(dir: &Path, out_dir: &Path) -> CliResult<()> {
    let dispersion_path = dir.join("dispersion.csv");
    let dispersion = String::from_utf8(read_path(&dispersion_path)?)
        .map_err(|_| CliError::data("dispersion.csv: not valid UTF-8"))?;
    let data_rows = dispersion
        .lines()
        .filter(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty())
        .skip(1) // column header
        .count();
    if data_rows == 0 {
        return Err(CliError::data(format!(
            "{}: empty dispersion table",
            dispersion_path.display()
        )));
    }
    let report: StabilityReport = {
        let text = String::from_utf8(read_path(&dir.join("stability.json"))?)
            .map_err(|_| CliError::data("stability.json: not valid UTF-8"))?;
        StabilityReport::from_json(&text).map_err(|e| CliError::data(e.to_string()))?
    };

    // σ₊ vs k
    write_path(&out_dir.join("sigma_vs_k.csv"), dispersion.as_bytes())?;

    // moments vs angle (copy when available)
    let moments_path = dir.join("moments.csv");
    let moment_table = if moments_path.exists() {
        let table = load_moment_table(&moments_path)?;
        write_path(
            &out_dir.join("moments_vs_angle.csv"),
            write_moment_csv(&table).as_bytes(),
        )?;
        Some(table)
    } else {
        write_path(
            &out_dir.join("moments_vs_angle.csv"),
            b"# no moment table in this run (pipeline entered downstream)\ntheta_deg,n_impacts\n",
        )?;
        None
    };

    // coefficients vs angle: from fits when available, else the single
    // stored coefficient set
    let labels;
    let mut coeff_csv = String::new();
    coeff_csv.push_str("# height-equation coefficients per unit flux\n");
    coeff_csv.push_str("# units: theta_deg in degrees; Y in nm/s per I0; S in nm^2/s per I0\n");
    let fits_path = dir.join("fits.json");
    let coeffs_path = dir.join("coefficients.json");
    let mut rows: Vec<CoefficientSet> = Vec::new();
    if fits_path.exists() {
        let fits = load_fits(&fits_path)?;
        for deg in 0..=90 {
            rows.push(compute_height_coefficients(&fits, (deg as f64).to_radians())?);
        }
    } else if coeffs_path.exists() {
        rows.push(load_coeffs(&coeffs_path.to_string_lossy())?);
    }
    if let Some(first) = rows.first() {
        labels = [first.species[0].label.clone(), first.species[1].label.clone()];
    } else {
        labels = ["A".to_string(), "B".to_string()];
    }
    coeff_csv.push_str("theta_deg");
    for label in &labels {
        for col in ["Y", "S_x_eros", "S_x_redist", "S_y_eros", "S_y_redist"] {
            coeff_csv.push_str(&format!(",{col}_{label}"));
        }
    }
    coeff_csv.push('\n');
    for set in &rows {
        coeff_csv.push_str(&format!("{}", set.theta_rad.to_degrees()));
        for sp in &set.species {
            coeff_csv.push_str(&format!(
                ",{},{},{},{},{}",
                sp.yield_rate, sp.s_x_eros, sp.s_x_redist, sp.s_y_eros, sp.s_y_redist
            ));
        }
        coeff_csv.push('\n');
    }
    write_path(&out_dir.join("coefficients_vs_angle.csv"), coeff_csv.as_bytes())?;

    // human-readable summary
    let mut summary = String::new();
    summary.push_str("surface stability report\n");
    summary.push_str("========================\n");
    summary.push_str(&format!("classification: {}\n", report.classification));
    summary.push_str(&format!(
        "longwave group G = {:.6e} (small-k curvature {:.6e})\n",
        report.longwave_group, report.small_k_curvature
    ));
    if let Some([lo, hi]) = report.band {
        summary.push_str(&format!("unstable band: k in [{lo:.6}, {hi:.6}] 1/nm\n"));
    }
    if let Some(fastest) = report.fastest {
        summary.push_str(&format!(
            "fastest mode: k* = {:.6} 1/nm, sigma+ = {:.6e} 1/s\n",
            fastest.k, fastest.sigma
        ));
    }
    if report.oscillatory {
        summary.push_str("note: some sampled modes are oscillatory\n");
    }
    if let Some(table) = &moment_table {
        summary.push_str(&format!(
            "moments: {} angles, species {} and {}\n",
            table.samples.len(),
            table.species[0].label,
            table.species[1].label
        ));
    }
    summary.push_str(&format!(
        "data files: sigma_vs_k.csv ({data_rows} rows), coefficients_vs_angle.csv ({} rows), moments_vs_angle.csv\n",
        rows.len()
    ));
    write_path(&out_dir.join("summary.txt"), summary.as_bytes())?;
    println!(
        "report: wrote {}/{{summary.txt, sigma_vs_k.csv, coefficients_vs_angle.csv, moments_vs_angle.csv}}",
        out_dir.display()
    );
    Ok(())
}
